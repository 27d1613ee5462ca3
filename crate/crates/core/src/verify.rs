//! Self-checks of the structural guarantees, gradients and linear oracles.
//!
//! Every check draws its random instances from one seed, so a report is
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, Dataset, SamplingMode, SamplingSpec, Split};
use crate::error::Result;
use crate::metrics::linreg_flow;
use crate::nets::{symplecticity_residual, NetKind, NetSpec, Network, ParamStore};
use crate::numkit::{expm, max_abs_diff_vec, Rng};
use crate::systems::System;
use crate::training::{grad, loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Structural,
    Gradients,
    Linear,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `value < threshold`, or `value > threshold` for lower-bound checks.
    pub lower_bound: bool,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            lower_bound: false,
            passed: value < threshold,
        }
    }

    fn above(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            lower_bound: true,
            passed: value > threshold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const FAMILIES: [NetKind; 3] = [NetKind::LocSympNet, NetKind::SymLocSympNet, NetKind::Vpnn];

/// Random small architecture of `kind` with `n` drawn from `{2, 3, 4, 6}`,
/// and parameters from `N(0, 0.5^2)`.
pub fn random_instance(kind: NetKind, rng: &mut Rng) -> (NetSpec, Vec<f64>) {
    let dims = [2, 3, 4, 6];
    let n = dims[(rng.next_uniform(0.0, 4.0) as usize).min(3)];
    let m = 1 + (rng.next_uniform(0.0, 8.0) as usize).min(7);
    let spec = match kind {
        NetKind::Vpnn => {
            let mut s = NetSpec::vpnn(n, 1 + rng.next_uniform(0.0, 4.0) as usize, 1 + rng.next_uniform(0.0, 2.0) as usize, m);
            s.s = Some(1 + (rng.next_uniform(0.0, (n - 1) as f64) as usize).min(n - 2));
            s
        }
        NetKind::LocSympNet => NetSpec::loc_symp(n, 1 + rng.next_uniform(0.0, 2.0) as usize, m),
        NetKind::SymLocSympNet => NetSpec::sym_loc_symp(n, 1 + rng.next_uniform(0.0, 2.0) as usize, m),
    };
    let count = spec.build().expect("valid random spec").param_count();
    let p = rng.normal(0.0, 0.5, count);
    (spec, p)
}

/// Synthetic pairs for gradient checks: targets are noisy copies of inputs.
pub fn random_dataset(n: usize, pairs: usize, tau: f64, rng: &mut Rng) -> Dataset {
    let inputs: Vec<Vec<f64>> = (0..pairs).map(|_| rng.normal(0.0, 1.0, n)).collect();
    let targets: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.iter().map(|v| v + rng.next_normal(0.0, 0.3)).collect())
        .collect();
    Dataset::synthetic(inputs, targets, tau, Split::Train).expect("consistent synthetic pairs")
}

/// Central differences of the loss with step `step` on every parameter.
pub fn fd_gradient(params: &ParamStore, ds: &Dataset, step: f64) -> Result<Vec<f64>> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = params.values()[j];
        work.values_mut()[j] = orig + step;
        let lp = loss(&work, ds)?;
        work.values_mut()[j] = orig - step;
        let lm = loss(&work, ds)?;
        work.values_mut()[j] = orig;
        out.push((lp - lm) / (2.0 * step));
    }
    Ok(out)
}

/// Largest componentwise `|a - f| / max(|a|, |f|, floor)` where the floor is
/// a tenth of the largest gradient magnitude. Central differences of an
/// `O(1)` loss at step `1e-6` carry roughly `1e-10` of rounding noise, so
/// components far below the gradient scale are compared on that scale.
pub fn gradient_relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = analytic.iter().chain(fd).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (0.1 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn structural(rng: &mut Rng, instances: usize, out: &mut Vec<Check>) -> Result<()> {
    let mut roundtrip = 0.0f64;
    let mut det = 0.0f64;
    let mut residual = 0.0f64;
    let mut symmetry = 0.0f64;
    let mut asymmetry = 0.0f64;
    for kind in FAMILIES {
        for _ in 0..instances {
            let (spec, p) = random_instance(kind, rng);
            let net: Network = spec.build()?;
            let y = rng.normal(0.0, 1.0, spec.n);
            let h = rng.next_uniform(0.05, 0.5);
            let fwd = net.forward(&p, &y, h)?;
            roundtrip = roundtrip.max(max_abs_diff_vec(&net.inverse(&p, &fwd, h)?, &y));
            let jac = net.jacobian_fd(&p, &y, h, 1e-5)?;
            det = det.max((jac.det()? - 1.0).abs());
            match kind {
                NetKind::SymLocSympNet => {
                    let back = net.forward(&p, &fwd, -h)?;
                    symmetry = symmetry.max(max_abs_diff_vec(&back, &y));
                }
                NetKind::LocSympNet => {
                    let back = net.forward(&p, &fwd, -h)?;
                    asymmetry = asymmetry.max(max_abs_diff_vec(&back, &y));
                }
                NetKind::Vpnn => {}
            }
            if kind != NetKind::Vpnn {
                let store = ParamStore::from_values(&spec, p.clone())?;
                for (i, (shape, _)) in net.grad_blocks().iter().enumerate() {
                    let module = store.grad_module(i)?;
                    let j = module.jacobian(&y, h)?;
                    let k = shape.k - 1;
                    let block = [[j[(k, k)], j[(k, k + 1)]], [j[(k + 1, k)], j[(k + 1, k + 1)]]];
                    residual = residual.max(symplecticity_residual(block));
                }
            }
        }
    }
    out.push(Check::below("forward/inverse round trip", roundtrip, 1e-12));
    out.push(Check::below("finite-difference |det J - 1|", det, 1e-5));
    out.push(Check::below("module 2x2 symplecticity residual", residual, 1e-10));
    out.push(Check::below("SymLocSympNet(h) o SymLocSympNet(-h) - id", symmetry, 1e-12));
    out.push(Check::above("LocSympNet(h) o LocSympNet(-h) - id (not symmetric)", asymmetry, 1e-6));
    Ok(())
}

fn gradients(rng: &mut Rng, instances: usize, out: &mut Vec<Check>) -> Result<()> {
    for kind in FAMILIES {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let (spec, p) = random_instance(kind, rng);
            let store = ParamStore::from_values(&spec, p)?;
            let ds = random_dataset(spec.n, 4, rng.next_uniform(0.05, 0.5), rng);
            let g = grad(&store, &ds)?;
            let fd = fd_gradient(&store, &ds, 1e-6)?;
            worst = worst.max(gradient_relative_error(&g, &fd));
        }
        out.push(Check::below(&format!("{kind:?} gradient vs finite differences"), worst, 1e-6));
    }
    Ok(())
}

fn linear(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let sys = System::advection();
    let mut spec = SamplingSpec::new(SamplingMode::RandomNormalIc { n_train: 60, n_val: 0 }, 0.01);
    spec.seed = seed;
    spec.rtol = 1e-13;
    spec.atol = 1e-13;
    let (train, _) = build_dataset(&sys, &spec)?;
    let est = linreg_flow(&train)?;
    let exact = expm(&sys.advection_matrix().expect("advection matrix"), 0.01)?;
    out.push(Check::below("linear regression vs expm(A tau)", est.max_abs_diff(&exact), 1e-10));
    out.push(Check::below("linear regression |det - 1|", (est.det()? - 1.0).abs(), 1e-8));
    Ok(())
}

pub fn run(scope: Scope, seed: u64) -> Result<VerifyReport> {
    let mut rng = Rng::new(seed);
    let mut checks = Vec::new();
    if matches!(scope, Scope::Structural | Scope::All) {
        structural(&mut rng, 100, &mut checks)?;
    }
    if matches!(scope, Scope::Gradients | Scope::All) {
        gradients(&mut rng, 20, &mut checks)?;
    }
    if matches!(scope, Scope::Linear | Scope::All) {
        linear(seed, &mut checks)?;
    }
    Ok(VerifyReport { checks })
}
