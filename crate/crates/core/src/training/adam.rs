use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) -> Result<()> {
        if x.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::dim("adam step", self.m.len(), g.len().min(x.len())));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i}")));
        }
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            let gi = g[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * gi;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * gi * gi;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            x[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(3, AdamParams::default());
        let mut x = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(&mut x, &[0.0; 3], 1e-2).unwrap();
        }
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::new(4, AdamParams::default());
        let mut x = vec![0.0; 4];
        let g = [3.0, -1e-3, 250.0, -7.0];
        adam.step(&mut x, &g, 1e-2).unwrap();
        for (xi, gi) in x.iter().zip(&g) {
            // first bias-corrected step is lr * g / (|g| + eps)
            let expected = -1e-2 * gi / (gi.abs() + 1e-8);
            assert!((xi - expected).abs() <= 1e-15 * expected.abs(), "{xi} vs {expected}");
            assert!((xi + 1e-2 * gi.signum()).abs() <= 1.01e-10 / gi.abs());
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut x = vec![3.0, -4.0];
        for _ in 0..3000 {
            let g = [2.0 * x[0], 8.0 * x[1]];
            adam.step(&mut x, &g, 1e-2).unwrap();
        }
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut x = vec![0.0; 2];
        assert!(adam.step(&mut x, &[f64::NAN, 0.0], 1e-3).is_err());
        assert_eq!(adam.steps_taken(), 0);
    }
}
