use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nets::{NetKind, NetSpec, ParamStore};
use crate::numkit::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// Grad-module `W` and `w` from `N(0, std^2)`, biases zero.
    GaussianSmall { std: f64 },
    /// Subnet weights from `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    XavierUniform,
}

impl InitScheme {
    pub fn default_for(kind: NetKind) -> Self {
        match kind {
            NetKind::Vpnn => InitScheme::XavierUniform,
            _ => InitScheme::GaussianSmall { std: 0.1 },
        }
    }
}

/// Fresh parameters. Biases are zero in every scheme; in linear mode the
/// grad-module biases also never receive gradient, so they stay zero.
pub fn init_params(spec: &NetSpec, scheme: InitScheme, rng: &mut Rng) -> Result<ParamStore> {
    let mut store = ParamStore::zeros(spec)?;
    let net = spec.build()?;
    let values = store.values_mut();
    match (spec.kind, scheme) {
        (NetKind::Vpnn, _) => {
            let std = match scheme {
                InitScheme::GaussianSmall { std } => Some(std),
                InitScheme::XavierUniform => None,
            };
            for c in net.couplings() {
                for (off, fi, fo) in c.mlp.layers() {
                    let start = c.offset + off;
                    let bound = (6.0 / (fi + fo) as f64).sqrt();
                    for v in &mut values[start..start + fi * fo] {
                        *v = match std {
                            Some(s) => rng.next_normal(0.0, s),
                            None => rng.next_uniform(-bound, bound),
                        };
                    }
                }
            }
        }
        (_, scheme) => {
            for (shape, off) in net.grad_blocks() {
                let weights = shape.m * (shape.n - 1) + shape.m;
                for v in &mut values[off..off + weights] {
                    *v = match scheme {
                        InitScheme::GaussianSmall { std } => rng.next_normal(0.0, std),
                        InitScheme::XavierUniform => {
                            let bound = (6.0 / (shape.n - 1 + shape.m) as f64).sqrt();
                            rng.next_uniform(-bound, bound)
                        }
                    };
                }
            }
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_start_at_zero() {
        let mut rng = Rng::new(1);
        for spec in [NetSpec::loc_symp(3, 2, 16), NetSpec::sym_loc_symp(4, 1, 8)] {
            let store = init_params(&spec, InitScheme::default_for(spec.kind), &mut rng).unwrap();
            for (shape, off) in spec.build().unwrap().grad_blocks() {
                let b0 = off + shape.m * shape.n;
                assert!(store.values()[b0..b0 + shape.m].iter().all(|&v| v == 0.0));
            }
        }
        let spec = NetSpec::vpnn(3, 4, 2, 16);
        let store = init_params(&spec, InitScheme::XavierUniform, &mut rng).unwrap();
        for c in spec.build().unwrap().couplings() {
            for (off, fi, fo) in c.mlp.layers() {
                let b0 = c.offset + off + fi * fo;
                assert!(store.values()[b0..b0 + fo].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn gaussian_weight_spread() {
        let spec = NetSpec::loc_symp(6, 50, 40);
        let store = init_params(&spec, InitScheme::GaussianSmall { std: 0.1 }, &mut Rng::new(2)).unwrap();
        let mut weights = Vec::new();
        for (shape, off) in spec.build().unwrap().grad_blocks() {
            weights.extend_from_slice(&store.values()[off..off + shape.m * shape.n]);
        }
        assert!(weights.len() >= 100_000);
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (weights.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.095..=0.105).contains(&std), "std {std}");
    }

    #[test]
    fn xavier_bound() {
        // fan_in = fan_out = 16 for the hidden-to-hidden layer
        let mut spec = NetSpec::vpnn(4, 2, 2, 16);
        spec.s = Some(2);
        let store = init_params(&spec, InitScheme::XavierUniform, &mut Rng::new(3)).unwrap();
        let net = spec.build().unwrap();
        let c = net.couplings()[0];
        let (off, fi, fo) = c.mlp.layers().nth(1).unwrap();
        assert_eq!((fi, fo), (16, 16));
        let bound = (6.0f64 / 32.0).sqrt();
        let layer = &store.values()[c.offset + off..c.offset + off + fi * fo];
        assert!(layer.iter().all(|v| v.abs() <= bound));
        assert!(layer.iter().any(|v| v.abs() > 0.8 * bound));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = NetSpec::sym_loc_symp(3, 1, 16);
        let a = init_params(&spec, InitScheme::GaussianSmall { std: 0.1 }, &mut Rng::new(4)).unwrap();
        let b = init_params(&spec, InitScheme::GaussianSmall { std: 0.1 }, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }
}
