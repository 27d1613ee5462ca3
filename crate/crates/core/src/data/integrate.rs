//! Dormand-Prince 5(4) with embedded error control.

use crate::error::{Error, Result};
use crate::systems::System;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-10,
        }
    }
}

// Autonomous systems only, so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th order weights minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a> {
    sys: &'a System,
    tol: Tolerances,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a System, tol: Tolerances) -> Self {
        let n = sys.dim();
        Stepper {
            sys,
            tol,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }

    /// Attempts one step of size `h` from `y` (with `k[0] = f(y)` already set).
    /// Returns the scaled error norm; the candidate is left in `y_new` and
    /// `f(y_new)` in `k[6]`.
    fn attempt(&mut self, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let s = &mut self.stage;
        for i in 0..n {
            s[i] = y[i] + h * A21 * k1[i];
        }
        self.sys.rhs_into(s, k2);
        for i in 0..n {
            s[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        self.sys.rhs_into(s, k3);
        for i in 0..n {
            s[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        self.sys.rhs_into(s, k4);
        for i in 0..n {
            s[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        self.sys.rhs_into(s, k5);
        for i in 0..n {
            s[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        self.sys.rhs_into(s, k6);
        let yn = &mut self.y_new;
        for i in 0..n {
            yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        self.sys.rhs_into(yn, k7);

        let mut acc = 0.0;
        for i in 0..n {
            let err = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(yn[i].abs());
            acc += (err / sc) * (err / sc);
        }
        (acc / n as f64).sqrt()
    }
}

/// Starting step (Hairer, Norsett & Wanner, II.4).
fn initial_step(sys: &System, y: &[f64], f0: &[f64], tol: Tolerances) -> f64 {
    let n = y.len() as f64;
    let sc = |i: usize| tol.atol + tol.rtol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.rhs_into(&y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1)
}

/// Integrates `sys` from `y0` over `[0, t_end]` and returns the states at
/// `t_j = j * sample_every`, `j = 0..=t_end/sample_every`.
///
/// Steps are clipped so that every sample time is hit exactly; no
/// interpolation is involved.
pub fn integrate_reference(
    sys: &System,
    y0: &[f64],
    t_end: f64,
    sample_every: f64,
    tol: Tolerances,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if y0.len() != sys.dim() {
        return Err(Error::dim("integrate_reference initial state", sys.dim(), y0.len()));
    }
    if !(t_end >= 0.0) {
        return Err(Error::OutOfRange(format!("t_end = {t_end}")));
    }
    if !(sample_every > 0.0) {
        return Err(Error::OutOfRange(format!("sample_every = {sample_every}")));
    }
    let ratio = t_end / sample_every;
    let samples = ratio.round();
    if (ratio - samples).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::OutOfRange(format!(
            "sample spacing {sample_every} does not divide t_end = {t_end}"
        )));
    }
    let samples = samples as usize;
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }

    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, y0.to_vec()));
    if samples == 0 {
        return Ok(out);
    }

    let mut st = Stepper::new(sys, tol);
    let mut y = y0.to_vec();
    sys.rhs_into(&y, &mut st.k[0]);
    let mut t = 0.0;
    let mut h = initial_step(sys, &y, &st.k[0], tol).min(sample_every);

    for j in 1..=samples {
        let target = j as f64 * sample_every;
        loop {
            let remaining = target - t;
            if remaining <= 0.0 {
                break;
            }
            let landing = h >= remaining * (1.0 - 1e-12);
            let h_try = if landing { remaining } else { h };
            if h_try < 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t, h: h_try });
            }
            let err = st.attempt(&y, h_try);
            if !err.is_finite() {
                // non-finite stage values: shrink hard and retry
                h = h_try * 0.1;
                continue;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if landing { target } else { t + h_try };
                std::mem::swap(&mut y, &mut st.y_new);
                let (first, rest) = st.k.split_at_mut(6);
                std::mem::swap(&mut first[0], &mut rest[0]);
                // a clipped landing step does not limit the next proposal
                h = if landing { h.max(h_try * fac) } else { h_try * fac };
            } else {
                h = h_try * fac.min(1.0);
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("state at t = {target}")));
        }
        out.push((target, y.clone()));
    }
    Ok(out)
}

/// Single flow step `y(tau)` from `y0`.
pub fn flow(sys: &System, y0: &[f64], tau: f64, tol: Tolerances) -> Result<Vec<f64>> {
    let mut traj = integrate_reference(sys, y0, tau, tau, tol)?;
    Ok(traj.pop().unwrap().1)
}
