//! Rollouts of learned maps and the error measures used to judge them.

mod report;

pub use report::{
    build_report, summarize_ensemble, AggregateStats, Aggregation, EnsembleSummary, RolloutOptions, RolloutReport, RolloutSummary,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::numkit::{dist2, Mat};
use crate::systems::System;

/// Iterated map `y_{j+1} = net(y_j, h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `y_0, ..., y_J`; shorter than `steps + 1` when the rollout diverged.
    pub states: Vec<Vec<f64>>,
    /// A non-finite state was produced and the rollout stopped before it.
    pub diverged: bool,
}

pub fn rollout(net: &Network, params: &[f64], y0: &[f64], steps: usize, h: f64) -> Result<Rollout> {
    if y0.len() != net.n() {
        return Err(Error::dim("rollout initial state", net.n(), y0.len()));
    }
    if params.len() != net.param_count() {
        return Err(Error::dim("network parameters", net.param_count(), params.len()));
    }
    let mut ws = net.workspace();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y0.to_vec());
    let mut y = y0.to_vec();
    for _ in 0..steps {
        net.forward_in_place(params, &mut y, h, &mut ws);
        if !y.iter().all(|v| v.is_finite()) {
            return Ok(Rollout { states, diverged: true });
        }
        states.push(y.clone());
    }
    Ok(Rollout {
        states,
        diverged: false,
    })
}

/// Euclidean distance per step.
pub fn global_error(states: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Vec<f64>> {
    if states.len() != reference.len() {
        return Err(Error::dim("reference trajectory length", states.len(), reference.len()));
    }
    states
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            if a.len() != b.len() {
                Err(Error::dim("reference state", a.len(), b.len()))
            } else {
                Ok(dist2(a, b))
            }
        })
        .collect()
}

/// `|Q(y_t) - Q(y_0)| / |Q(y_0)|` for every invariant of `sys`, measured
/// against the rollout's own initial state.
pub fn invariant_drift(states: &[Vec<f64>], sys: &System) -> Result<Vec<(&'static str, Vec<f64>)>> {
    let first = states
        .first()
        .ok_or(Error::EmptyDataset("rollout"))?;
    let q0 = sys.invariant_values(first)?;
    for (name, q) in &q0 {
        if *q == 0.0 {
            return Err(Error::ZeroInvariant { name: name.to_string() });
        }
    }
    let mut out: Vec<(&'static str, Vec<f64>)> = q0.iter().map(|(n, _)| (*n, Vec::with_capacity(states.len()))).collect();
    for y in states {
        let q = sys.invariant_values(y)?;
        for ((_, series), ((_, qt), (_, qi))) in out.iter_mut().zip(q.iter().zip(&q0)) {
            series.push((qt - qi).abs() / qi.abs());
        }
    }
    Ok(out)
}

/// Stable iff no divergence and every invariant's drift stays below one.
pub fn stability_flag(drifts: &[(&str, Vec<f64>)], diverged: bool) -> bool {
    !diverged && drifts.iter().all(|(_, s)| s.iter().all(|&d| d < 1.0))
}

/// `sqrt(dx * sum u_i^2)`.
pub fn l2_grid_norm(u: &[f64], dx: f64) -> f64 {
    assert!(dx > 0.0, "grid spacing must be positive");
    (dx * u.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `(sum Y X^T)(sum X X^T)^-1` over the dataset pairs.
pub fn linreg_flow(ds: &Dataset) -> Result<Mat> {
    let n = ds.dim();
    if ds.is_empty() {
        return Err(Error::EmptyDataset(ds.split.as_str()));
    }
    let mut xx = Mat::zeros(n, n);
    let mut yx = Mat::zeros(n, n);
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        for i in 0..n {
            for j in 0..n {
                xx[(i, j)] += x[i] * x[j];
                yx[(i, j)] += y[i] * x[j];
            }
        }
    }
    if ds.len() < n {
        return Err(Error::Singular(format!(
            "normal matrix of {} samples in dimension {n} is rank deficient; use at least {n} well-spread samples",
            ds.len()
        )));
    }
    let inv = xx.inverse().map_err(|_| {
        Error::Singular(format!(
            "normal matrix is not invertible; use more samples or better-spread initial conditions (N = {}, n = {n})",
            ds.len()
        ))
    })?;
    yx.matmul(&inv)
}

/// Matrix whose column `j` is `net(e_j, h)`; the end-to-end map when the
/// network is linear.
pub fn probe_linear_map(net: &Network, params: &[f64], h: f64) -> Result<Mat> {
    let n = net.n();
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = net.forward(params, &e, h)?;
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Least-squares line through `(t_i, e_i)`: `(slope, intercept, r_squared)`.
pub fn linear_fit(t: &[f64], e: &[f64]) -> (f64, f64, f64) {
    let n = t.len().min(e.len());
    if n < 2 {
        return (0.0, e.first().copied().unwrap_or(0.0), 0.0);
    }
    let nf = n as f64;
    let mt = t[..n].iter().sum::<f64>() / nf;
    let me = e[..n].iter().sum::<f64>() / nf;
    let (mut stt, mut ste, mut see) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dt, de) = (t[i] - mt, e[i] - me);
        stt += dt * dt;
        ste += dt * de;
        see += de * de;
    }
    if stt == 0.0 {
        return (0.0, me, 0.0);
    }
    let slope = ste / stt;
    let r2 = if see == 0.0 { 1.0 } else { ste * ste / (stt * see) };
    (slope, me - slope * mt, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, integrate_reference, Provenance, SamplingMode, SamplingSpec, Split, Tolerances};
    use crate::nets::{Activation, NetSpec};
    use crate::numkit::{expm, Rng};

    #[test]
    fn zero_steps_and_identity_net() {
        let spec = NetSpec::sym_loc_symp(3, 1, 4);
        let net = spec.build().unwrap();
        let p = vec![0.0; net.param_count()];
        let r = rollout(&net, &p, &[1.0, 2.0, 3.0], 0, 0.1).unwrap();
        assert_eq!(r.states, vec![vec![1.0, 2.0, 3.0]]);
        let r = rollout(&net, &p, &[1.0, 2.0, 3.0], 50, 0.1).unwrap();
        assert_eq!(r.states.len(), 51);
        assert!(r.states.iter().all(|s| s == &vec![1.0, 2.0, 3.0]));
        let drift = invariant_drift(&r.states, &System::rigid_body()).unwrap();
        assert!(drift.iter().all(|(_, s)| s.iter().all(|&d| d == 0.0)));
        assert!(stability_flag(&drift, false));
    }

    #[test]
    fn divergent_rollout_is_truncated() {
        let spec = NetSpec::loc_symp(2, 1, 1).with_activation(Activation::Linear);
        let net = spec.build().unwrap();
        // Up: p += h W w (W q), Low: q -= h W w (W p); large weights blow up
        let p = vec![30.0, 30.0, 0.0, -30.0, 30.0, 0.0];
        let r = rollout(&net, &p, &[1.0, 1.0], 1000, 1.0).unwrap();
        assert!(r.diverged);
        assert!(r.states.len() < 1001);
        assert!(r.states.iter().all(|s| s.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn global_error_cases() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(global_error(&a, &a).unwrap(), vec![0.0, 0.0]);
        let b: Vec<Vec<f64>> = a.iter().map(|y| vec![y[0] + 3.0, y[1] + 4.0]).collect();
        assert_eq!(global_error(&a, &b).unwrap(), vec![5.0, 5.0]);
        assert!(global_error(&a, &b[..1]).is_err());
    }

    #[test]
    fn reference_trajectory_has_tiny_drift() {
        let sys = System::rigid_body();
        let traj = integrate_reference(&sys, &sys.reference_initial_state(), 100.0, 0.1, Tolerances::default()).unwrap();
        let states: Vec<Vec<f64>> = traj.into_iter().map(|(_, y)| y).collect();
        let drift = invariant_drift(&states, &sys).unwrap();
        for (name, s) in &drift {
            let max = s.iter().cloned().fold(0.0, f64::max);
            assert!(max < 1e-7, "{name}: {max}");
        }
    }

    #[test]
    fn stability_thresholds_and_monotonicity() {
        let ok = vec![("H", vec![0.0, 0.2, 0.9])];
        let bad = vec![("H", vec![0.0, 1.5, 0.2])];
        assert!(stability_flag(&ok, false));
        assert!(!stability_flag(&ok, true));
        assert!(!stability_flag(&bad, false));
        // once revoked, extending the horizon cannot restore stability
        let series = [0.1, 0.5, 1.2, 0.3, 0.1];
        let mut was_unstable = false;
        for len in 1..=series.len() {
            let stable = stability_flag(&[("H", series[..len].to_vec())], false);
            if was_unstable {
                assert!(!stable);
            }
            was_unstable |= !stable;
        }
    }

    #[test]
    fn zero_invariant_is_rejected() {
        let states = vec![vec![0.0, 0.0, 0.0]];
        assert!(matches!(
            invariant_drift(&states, &System::rigid_body()),
            Err(Error::ZeroInvariant { .. })
        ));
    }

    #[test]
    fn grid_norm_values() {
        assert_eq!(l2_grid_norm(&[0.0; 35], 2.0 / 35.0), 0.0);
        assert!((l2_grid_norm(&[1.0; 35], 2.0 / 35.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    fn linear_dataset(a: &Mat, tau: f64, count: usize, seed: u64) -> Dataset {
        let n = a.rows();
        let e = expm(a, tau).unwrap();
        let mut rng = Rng::new(seed);
        let inputs: Vec<Vec<f64>> = (0..count).map(|_| rng.normal(0.0, 1.0, n)).collect();
        let targets = inputs.iter().map(|x| e.mul_vec(x).unwrap()).collect();
        let prov = Provenance {
            system: System::advection(),
            sampling: SamplingMode::RandomNormalIc { n_train: count, n_val: 0 },
            seed,
            permutation: None,
        };
        let mut ds = Dataset::new(vec![vec![0.0; 35]], vec![vec![0.0; 35]], tau, Split::Train, prov).unwrap();
        ds.inputs = inputs;
        ds.targets = targets;
        ds
    }

    #[test]
    fn linreg_recovers_exact_linear_flow() {
        let a = System::advection().advection_matrix().unwrap();
        let ds = linear_dataset(&a, 0.01, 60, 1);
        let est = linreg_flow(&ds).unwrap();
        let exact = expm(&a, 0.01).unwrap();
        assert!(est.max_abs_diff(&exact) < 1e-10, "{}", est.max_abs_diff(&exact));

        let zero = Mat::zeros(35, 35);
        let ds = linear_dataset(&zero, 0.01, 40, 2);
        assert!(linreg_flow(&ds).unwrap().max_abs_diff(&Mat::identity(35)) < 1e-12);

        let ds = linear_dataset(&a, 0.01, 20, 3);
        assert!(matches!(linreg_flow(&ds), Err(Error::Singular(_))));
    }

    #[test]
    fn linreg_on_integrated_advection_data() {
        let sys = System::advection();
        let mut spec = SamplingSpec::new(SamplingMode::RandomNormalIc { n_train: 60, n_val: 0 }, 0.01);
        spec.rtol = 1e-13;
        spec.atol = 1e-13;
        let (train, _) = build_dataset(&sys, &spec).unwrap();
        let est = linreg_flow(&train).unwrap();
        let exact = expm(&sys.advection_matrix().unwrap(), 0.01).unwrap();
        assert!(est.max_abs_diff(&exact) < 1e-10, "{}", est.max_abs_diff(&exact));
        assert!((est.det().unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_net_probe_has_unit_determinant() {
        let mut rng = Rng::new(4);
        for spec in [
            NetSpec::loc_symp(6, 2, 6).with_activation(Activation::Linear),
            NetSpec::sym_loc_symp(5, 1, 5).with_activation(Activation::Linear),
        ] {
            let net = spec.build().unwrap();
            let mut p = rng.normal(0.0, 0.3, net.param_count());
            for (shape, off) in net.grad_blocks() {
                let b0 = off + shape.m * shape.n;
                p[b0..b0 + shape.m].iter_mut().for_each(|v| *v = 0.0);
            }
            let m = probe_linear_map(&net, &p, 0.5).unwrap();
            assert!((m.det().unwrap() - 1.0).abs() < 1e-10);
            let y = rng.normal(0.0, 1.0, spec.n);
            let direct = net.forward(&p, &y, 0.5).unwrap();
            let via = m.mul_vec(&y).unwrap();
            assert!(crate::numkit::max_abs_diff_vec(&direct, &via) < 1e-12);
        }
    }

    #[test]
    fn linear_fit_exact_line() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let e: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let (s, c, r2) = linear_fit(&t, &e);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
