//! Volume-preserving network architectures as pure maps of `(params, y, h)`.
//!
//! Composition convention: in `f = g1 o g2 o ... o gr` the rightmost map is
//! applied first. A `LocSympNet` therefore applies, for each of its `K`
//! repeats, `Up_{n-1}, Low_{n-1}, Up_{n-2}, ..., Up_1, Low_1` in that order.
//! A `SymLocSympNet` runs that sequence at `h/2` and then replays it exactly
//! reversed at `h/2` with the same parameter blocks, which makes the map
//! satisfy `net(., h)^-1 = net(., -h)`. The coupling baseline (`Vpnn`)
//! alternates additive Up/Low couplings driven by small MLPs and ignores `h`.

mod checkpoint;
mod mlp;
mod module;
mod params;

pub use checkpoint::Checkpoint;
pub use mlp::MlpShape;
pub use module::{symplecticity_residual, GradModuleParams, ModuleKind, ModuleShape};
pub use params::{BlockRange, ParamStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{fd_jacobian, Mat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    /// Identity activation; grad-module biases are pinned at zero.
    Linear,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `s = eval(z)`.
    #[inline]
    pub fn derivative_from_output(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => s * (1.0 - s),
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetKind {
    LocSympNet,
    SymLocSympNet,
    #[serde(rename = "VPNN", alias = "Vpnn")]
    Vpnn,
}

fn one() -> usize {
    1
}

/// Architecture description. `k` and `tie_repeats` apply to the
/// locally-symplectic families, `layers`, `hidden` and `s` to `Vpnn`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub n: usize,
    /// Width: hidden units per module (or per MLP layer).
    pub m: usize,
    /// Repetitions of the `V_1 o ... o V_{n-1}` composition.
    #[serde(default = "one")]
    pub k: usize,
    /// Number of coupling modules.
    #[serde(default = "one")]
    pub layers: usize,
    /// Hidden layers per coupling subnet.
    #[serde(default = "one")]
    pub hidden: usize,
    /// Coupling partition size; defaults to `n / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Share one set of module parameters across the `k` repeats.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie_repeats: bool,
}

impl NetSpec {
    fn base(kind: NetKind, n: usize, m: usize) -> Self {
        NetSpec {
            kind,
            n,
            m,
            k: 1,
            layers: 1,
            hidden: 1,
            s: None,
            activation: Activation::Sigmoid,
            tie_repeats: false,
        }
    }

    pub fn loc_symp(n: usize, k: usize, m: usize) -> Self {
        NetSpec {
            k,
            ..Self::base(NetKind::LocSympNet, n, m)
        }
    }

    pub fn sym_loc_symp(n: usize, k: usize, m: usize) -> Self {
        NetSpec {
            k,
            ..Self::base(NetKind::SymLocSympNet, n, m)
        }
    }

    pub fn vpnn(n: usize, layers: usize, hidden: usize, m: usize) -> Self {
        NetSpec {
            layers,
            hidden,
            ..Self::base(NetKind::Vpnn, n, m)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn partition(&self) -> usize {
        self.s.unwrap_or(self.n / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n < 2 {
            return bad(format!("state dimension n = {} must be >= 2", self.n));
        }
        if self.m == 0 {
            return bad("width m must be >= 1".into());
        }
        match self.kind {
            NetKind::LocSympNet | NetKind::SymLocSympNet => {
                if self.k == 0 {
                    return bad("repetition count K must be >= 1".into());
                }
            }
            NetKind::Vpnn => {
                if self.layers == 0 {
                    return bad("coupling module count L must be >= 1".into());
                }
                if self.hidden == 0 {
                    return bad("coupling subnets need at least one hidden layer".into());
                }
                let s = self.partition();
                if s == 0 || s >= self.n {
                    return bad(format!("partition s = {s} outside 1..={}", self.n - 1));
                }
            }
        }
        Ok(())
    }

    /// Module applications per forward pass: `2(n-1)K` for `LocSympNet`,
    /// twice that for `SymLocSympNet`, `L` for `Vpnn`.
    pub fn depth(&self) -> usize {
        match self.kind {
            NetKind::LocSympNet => 2 * (self.n - 1) * self.k,
            NetKind::SymLocSympNet => 4 * (self.n - 1) * self.k,
            NetKind::Vpnn => self.layers,
        }
    }

    pub fn build(&self) -> Result<Network> {
        Network::new(self)
    }
}

/// Total number of trainable values (including pinned linear-mode biases).
pub fn param_count(spec: &NetSpec) -> Result<usize> {
    Ok(spec.build()?.param_count())
}

/// One module application of a grad-module plan: parameter block and step
/// multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub block: usize,
    pub h_scale: f64,
}

/// One additive coupling of the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub kind: ModuleKind,
    pub split: usize,
    pub mlp: MlpShape,
    pub offset: usize,
}

#[derive(Clone, Debug)]
enum Layout {
    Grad {
        blocks: Vec<ModuleShape>,
        offsets: Vec<usize>,
        steps: Vec<Step>,
    },
    Vpnn {
        couplings: Vec<Coupling>,
    },
}

/// Evaluation plan built from a [`NetSpec`]; parameters are passed in flat.
#[derive(Clone, Debug)]
pub struct Network {
    n: usize,
    layout: Layout,
    param_count: usize,
    act_stride: usize,
    scratch_len: usize,
}

/// Reusable buffers for allocation-free evaluation and reverse mode.
#[derive(Clone, Debug)]
pub struct Workspace {
    states: Vec<f64>,
    acts: Vec<f64>,
    scratch: Vec<f64>,
    tmp: Vec<f64>,
}

impl Network {
    fn new(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        match spec.kind {
            NetKind::LocSympNet | NetKind::SymLocSympNet => {
                let per_pass = 2 * (n - 1);
                let distinct = if spec.tie_repeats { 1 } else { spec.k };
                let mut blocks = Vec::with_capacity(per_pass * distinct);
                for _ in 0..distinct {
                    for k in (1..n).rev() {
                        for kind in [ModuleKind::Up, ModuleKind::Low] {
                            blocks.push(ModuleShape::new(kind, k, n, spec.m, spec.activation)?);
                        }
                    }
                }
                let symmetric = spec.kind == NetKind::SymLocSympNet;
                let scale = if symmetric { 0.5 } else { 1.0 };
                let mut steps = Vec::with_capacity(spec.depth());
                for r in 0..spec.k {
                    let rep = if spec.tie_repeats { 0 } else { r };
                    for j in 0..per_pass {
                        steps.push(Step {
                            block: rep * per_pass + j,
                            h_scale: scale,
                        });
                    }
                }
                if symmetric {
                    let adjoint: Vec<Step> = steps.iter().rev().copied().collect();
                    steps.extend(adjoint);
                }
                Self::from_grad_plan(blocks, steps)
            }
            NetKind::Vpnn => {
                let s = spec.partition();
                let mut couplings = Vec::with_capacity(spec.layers);
                let mut offset = 0;
                for i in 0..spec.layers {
                    let kind = if i % 2 == 0 { ModuleKind::Up } else { ModuleKind::Low };
                    let (input, output) = match kind {
                        ModuleKind::Up => (n - s, s),
                        ModuleKind::Low => (s, n - s),
                    };
                    let mlp = MlpShape {
                        input,
                        output,
                        width: spec.m,
                        hidden: spec.hidden,
                        activation: spec.activation,
                    };
                    couplings.push(Coupling {
                        kind,
                        split: s,
                        mlp,
                        offset,
                    });
                    offset += mlp.param_len();
                }
                let scratch_len = couplings.iter().map(|c| c.mlp.scratch_len()).max().unwrap_or(0);
                Ok(Network {
                    n,
                    layout: Layout::Vpnn { couplings },
                    param_count: offset,
                    act_stride: spec.hidden * spec.m,
                    scratch_len,
                })
            }
        }
    }

    /// Grad-module network from an explicit plan. Steps may reference any
    /// block any number of times; gradients of shared blocks accumulate.
    pub fn from_grad_plan(blocks: Vec<ModuleShape>, steps: Vec<Step>) -> Result<Self> {
        let n = blocks
            .first()
            .map(|b| b.n)
            .ok_or_else(|| Error::InvalidSpec("a network needs at least one module".into()))?;
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total = 0;
        for b in &blocks {
            if b.n != n {
                return Err(Error::dim("module state dimension", n, b.n));
            }
            offsets.push(total);
            total += b.param_len();
        }
        if let Some(s) = steps.iter().find(|s| s.block >= blocks.len()) {
            return Err(Error::InvalidSpec(format!("step references missing block {}", s.block)));
        }
        let act_stride = blocks.iter().map(|b| b.m).max().unwrap_or(0);
        Ok(Network {
            n,
            layout: Layout::Grad {
                blocks,
                offsets,
                steps,
            },
            param_count: total,
            act_stride,
            scratch_len: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Module applications per forward pass.
    pub fn depth(&self) -> usize {
        match &self.layout {
            Layout::Grad { steps, .. } => steps.len(),
            Layout::Vpnn { couplings } => couplings.len(),
        }
    }

    /// Grad-module blocks with their flat offsets (empty for `Vpnn`).
    pub fn grad_blocks(&self) -> Vec<(ModuleShape, usize)> {
        match &self.layout {
            Layout::Grad { blocks, offsets, .. } => blocks.iter().copied().zip(offsets.iter().copied()).collect(),
            Layout::Vpnn { .. } => Vec::new(),
        }
    }

    pub fn couplings(&self) -> &[Coupling] {
        match &self.layout {
            Layout::Vpnn { couplings } => couplings,
            Layout::Grad { .. } => &[],
        }
    }

    /// `(kind, k, h_scale)` of each module application, in order.
    pub fn application_order(&self) -> Vec<(ModuleKind, usize, f64)> {
        match &self.layout {
            Layout::Grad { blocks, steps, .. } => steps
                .iter()
                .map(|s| (blocks[s.block].kind, blocks[s.block].k, s.h_scale))
                .collect(),
            Layout::Vpnn { couplings } => couplings.iter().map(|c| (c.kind, c.split, 1.0)).collect(),
        }
    }

    pub fn workspace(&self) -> Workspace {
        let depth = self.depth();
        Workspace {
            states: vec![0.0; depth * self.n],
            acts: vec![0.0; depth * self.act_stride.max(1)],
            scratch: vec![0.0; self.scratch_len],
            tmp: vec![0.0; self.n],
        }
    }

    fn check(&self, p: &[f64], y: &[f64]) -> Result<()> {
        if p.len() != self.param_count {
            return Err(Error::dim("network parameters", self.param_count, p.len()));
        }
        if y.len() != self.n {
            return Err(Error::dim("network state", self.n, y.len()));
        }
        Ok(())
    }

    pub fn forward(&self, p: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
        self.check(p, y)?;
        let mut out = y.to_vec();
        let mut ws = self.workspace();
        self.forward_in_place(p, &mut out, h, &mut ws);
        Ok(out)
    }

    /// Exact inverse: module inverses applied in reverse order.
    pub fn inverse(&self, p: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
        self.check(p, y)?;
        let mut out = y.to_vec();
        let mut ws = self.workspace();
        self.inverse_in_place(p, &mut out, h, &mut ws);
        Ok(out)
    }

    /// Unchecked in-place forward map; `p` and `y` must have the right lengths.
    pub fn forward_in_place(&self, p: &[f64], y: &mut [f64], h: f64, ws: &mut Workspace) {
        match &self.layout {
            Layout::Grad { blocks, offsets, steps } => {
                for s in steps {
                    let b = &blocks[s.block];
                    let off = offsets[s.block];
                    b.apply(&p[off..off + b.param_len()], y, h * s.h_scale, None);
                }
            }
            Layout::Vpnn { couplings } => {
                for c in couplings {
                    coupling_apply(c, p, y, &mut ws.acts, &mut ws.tmp, 1.0);
                }
            }
        }
    }

    pub fn inverse_in_place(&self, p: &[f64], y: &mut [f64], h: f64, ws: &mut Workspace) {
        match &self.layout {
            Layout::Grad { blocks, offsets, steps } => {
                for s in steps.iter().rev() {
                    let b = &blocks[s.block];
                    let off = offsets[s.block];
                    b.apply(&p[off..off + b.param_len()], y, -h * s.h_scale, None);
                }
            }
            Layout::Vpnn { couplings } => {
                for c in couplings.iter().rev() {
                    coupling_apply(c, p, y, &mut ws.acts, &mut ws.tmp, -1.0);
                }
            }
        }
    }

    /// Forward pass recording what reverse mode needs. Fails on the first
    /// module whose output is not finite.
    pub fn forward_taped(&self, p: &[f64], y: &mut [f64], h: f64, ws: &mut Workspace) -> Result<()> {
        let n = self.n;
        let stride = self.act_stride;
        match &self.layout {
            Layout::Grad { blocks, offsets, steps } => {
                for (i, s) in steps.iter().enumerate() {
                    let b = &blocks[s.block];
                    let off = offsets[s.block];
                    ws.states[i * n..(i + 1) * n].copy_from_slice(y);
                    let acts = &mut ws.acts[i * stride..i * stride + b.m];
                    b.apply(&p[off..off + b.param_len()], y, h * s.h_scale, Some(acts));
                    if !y[b.active()].is_finite() {
                        return Err(Error::NonFinite(format!("output of module {i} ({:?}_{})", b.kind, b.k)));
                    }
                }
            }
            Layout::Vpnn { couplings } => {
                for (i, c) in couplings.iter().enumerate() {
                    ws.states[i * n..(i + 1) * n].copy_from_slice(y);
                    let acts = &mut ws.acts[i * stride..(i + 1) * stride];
                    coupling_apply(c, p, y, acts, &mut ws.tmp, 1.0);
                    if !y.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite(format!("output of coupling module {i}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep over the tape of the last [`Network::forward_taped`].
    /// `ybar` enters as the output adjoint and leaves as the input adjoint;
    /// parameter gradients are added to `g`.
    pub fn backward_taped(&self, p: &[f64], h: f64, ws: &mut Workspace, ybar: &mut [f64], g: &mut [f64]) {
        let n = self.n;
        let stride = self.act_stride;
        match &self.layout {
            Layout::Grad { blocks, offsets, steps } => {
                for (i, s) in steps.iter().enumerate().rev() {
                    let b = &blocks[s.block];
                    let off = offsets[s.block];
                    let len = b.param_len();
                    b.backward(
                        &p[off..off + len],
                        &ws.states[i * n..(i + 1) * n],
                        &ws.acts[i * stride..i * stride + b.m],
                        h * s.h_scale,
                        ybar,
                        &mut g[off..off + len],
                    );
                }
            }
            Layout::Vpnn { couplings } => {
                for (i, c) in couplings.iter().enumerate().rev() {
                    let len = c.mlp.param_len();
                    let state = &ws.states[i * n..(i + 1) * n];
                    let acts = &ws.acts[i * stride..(i + 1) * stride];
                    let pc = &p[c.offset..c.offset + len];
                    let gc = &mut g[c.offset..c.offset + len];
                    let (y1, y2) = ybar.split_at_mut(c.split);
                    match c.kind {
                        ModuleKind::Up => {
                            c.mlp.backward(pc, &state[c.split..], acts, y1, y2, gc, &mut ws.scratch)
                        }
                        ModuleKind::Low => {
                            c.mlp.backward(pc, &state[..c.split], acts, y2, y1, gc, &mut ws.scratch)
                        }
                    }
                }
            }
        }
    }

    /// Vector-Jacobian product: returns `(net(y), ybar^T dnet/dy, ybar^T dnet/dp)`.
    pub fn vjp(&self, p: &[f64], y: &[f64], h: f64, ybar: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check(p, y)?;
        if ybar.len() != self.n {
            return Err(Error::dim("output adjoint", self.n, ybar.len()));
        }
        let mut ws = self.workspace();
        let mut out = y.to_vec();
        self.forward_taped(p, &mut out, h, &mut ws)?;
        let mut yb = ybar.to_vec();
        let mut g = vec![0.0; self.param_count];
        self.backward_taped(p, h, &mut ws, &mut yb, &mut g);
        Ok((out, yb, g))
    }

    /// Central finite-difference Jacobian of the forward map.
    pub fn jacobian_fd(&self, p: &[f64], y: &[f64], h: f64, step: f64) -> Result<Mat> {
        self.check(p, y)?;
        fd_jacobian(
            |x| {
                let mut out = x.to_vec();
                self.forward_in_place(p, &mut out, h, &mut self.workspace());
                out
            },
            y,
            step,
        )
    }
}

/// `dir = 1` adds the subnet output, `dir = -1` subtracts it.
fn coupling_apply(c: &Coupling, p: &[f64], y: &mut [f64], acts: &mut [f64], tmp: &mut [f64], dir: f64) {
    let pc = &p[c.offset..c.offset + c.mlp.param_len()];
    let (y1, y2) = y.split_at_mut(c.split);
    let (cond, target): (&[f64], &mut [f64]) = match c.kind {
        ModuleKind::Up => (y2, y1),
        ModuleKind::Low => (y1, y2),
    };
    let out = &mut tmp[..target.len()];
    out.iter_mut().for_each(|v| *v = 0.0);
    c.mlp.forward_add(pc, cond, acts, out);
    for (t, o) in target.iter_mut().zip(out.iter()) {
        *t += dir * o;
    }
}

/// Forward map of a parameter store.
pub fn net_forward(params: &ParamStore, y: &[f64], h: f64) -> Result<Vec<f64>> {
    params.network()?.forward(params.values(), y, h)
}

/// Inverse map of a parameter store.
pub fn net_inverse(params: &ParamStore, y: &[f64], h: f64) -> Result<Vec<f64>> {
    params.network()?.inverse(params.values(), y, h)
}

#[cfg(test)]
mod tests;
