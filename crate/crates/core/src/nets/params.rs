use std::ops::Range;

use super::{GradModuleParams, NetKind, NetSpec, Network};
use crate::error::{Error, Result};

/// Flat parameter vector tagged with the spec it belongs to.
///
/// Blocks are laid out in application order of the first pass: for the
/// grad-module families one `m(n+1)` block per module (`W`, `w`, `b`), for
/// the coupling baseline one block per subnet (layer weights and biases).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    spec: NetSpec,
    values: Vec<f64>,
}

/// Named range of the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRange {
    pub label: String,
    pub range: Range<usize>,
}

impl ParamStore {
    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        let count = spec.build()?.param_count();
        Ok(ParamStore {
            spec: spec.clone(),
            values: vec![0.0; count],
        })
    }

    pub fn from_values(spec: &NetSpec, values: Vec<f64>) -> Result<Self> {
        let count = spec.build()?.param_count();
        if values.len() != count {
            return Err(Error::dim("parameter count", count, values.len()));
        }
        Ok(ParamStore {
            spec: spec.clone(),
            values,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn network(&self) -> Result<Network> {
        self.spec.build()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blocks(&self) -> Result<Vec<BlockRange>> {
        let net = self.network()?;
        Ok(match self.spec.kind {
            NetKind::Vpnn => net
                .couplings()
                .iter()
                .enumerate()
                .map(|(i, c)| BlockRange {
                    label: format!("coupling{i}_{:?}", c.kind).to_lowercase(),
                    range: c.offset..c.offset + c.mlp.param_len(),
                })
                .collect(),
            _ => net
                .grad_blocks()
                .iter()
                .enumerate()
                .map(|(i, (shape, off))| BlockRange {
                    label: format!("module{i}_{:?}{}", shape.kind, shape.k).to_lowercase(),
                    range: *off..off + shape.param_len(),
                })
                .collect(),
        })
    }

    /// Copy of grad-module block `i` in structured form.
    pub fn grad_module(&self, i: usize) -> Result<GradModuleParams> {
        let blocks = self.network()?.grad_blocks();
        let (shape, off) = *blocks
            .get(i)
            .ok_or_else(|| Error::OutOfRange(format!("module block {i} of {}", blocks.len())))?;
        GradModuleParams::from_flat(shape, &self.values[off..off + shape.param_len()])
    }

    /// Writes a structured block back into the flat vector.
    pub fn set_grad_module(&mut self, i: usize, module: &GradModuleParams) -> Result<()> {
        let blocks = self.network()?.grad_blocks();
        let (shape, off) = *blocks
            .get(i)
            .ok_or_else(|| Error::OutOfRange(format!("module block {i} of {}", blocks.len())))?;
        if shape != module.shape {
            return Err(Error::InvalidSpec(format!("block {i} has shape {shape:?}, got {:?}", module.shape)));
        }
        self.values[off..off + shape.param_len()].copy_from_slice(&module.flat());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn structured_and_flat_views_agree() {
        let spec = NetSpec::loc_symp(3, 2, 4);
        let mut rng = Rng::new(1);
        let values = rng.normal(0.0, 1.0, 8 * 16);
        let mut store = ParamStore::from_values(&spec, values.clone()).unwrap();
        let blocks = store.blocks().unwrap();
        assert_eq!(blocks.len(), 8);
        assert_eq!(blocks[0].label, "module0_up2");
        assert_eq!(blocks[1].label, "module1_low2");
        let mut module = store.grad_module(3).unwrap();
        assert_eq!(module.flat(), values[blocks[3].range.clone()].to_vec());
        module.w[0] = 42.0;
        store.set_grad_module(3, &module).unwrap();
        assert_eq!(store.values()[blocks[3].range.start + 4 * 2], 42.0);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let spec = NetSpec::sym_loc_symp(3, 1, 16);
        assert!(ParamStore::from_values(&spec, vec![0.0; 255]).is_err());
        assert_eq!(ParamStore::zeros(&spec).unwrap().len(), 256);
    }
}
