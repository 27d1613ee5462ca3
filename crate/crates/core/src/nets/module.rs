//! Locally-symplectic Up/Low modules.
//!
//! A module of kind `Up` for pair `k` (1-based, `1 <= k <= n-1`) updates
//! component `k` only:
//!
//! `Y_k = y_k + h * sum_i W[i][k] w_i s(W yhat + b)_i`
//!
//! where `yhat` is `y` with component `k` removed and `W[i][k]` is column `k`
//! of the `m x (n-1)` matrix. `Low` updates `k+1` with the opposite sign,
//! removing component `k+1` from `y` but using the same column of `W`.
//!
//! Parameters are stored flat: `W` row-major, then `w`, then `b`.

use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};
use crate::numkit::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Up,
    Low,
}

/// Shape of one module; the parameter block lives elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModuleShape {
    pub kind: ModuleKind,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub activation: Activation,
}

impl ModuleShape {
    pub fn new(kind: ModuleKind, k: usize, n: usize, m: usize, activation: Activation) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSpec(format!("module dimension n = {n} must be >= 2")));
        }
        if k == 0 || k >= n {
            return Err(Error::InvalidSpec(format!("module pair index k = {k} outside 1..={}", n - 1)));
        }
        if m == 0 {
            return Err(Error::InvalidSpec("module width m must be >= 1".into()));
        }
        Ok(ModuleShape {
            kind,
            k,
            n,
            m,
            activation,
        })
    }

    /// 0-based index of the updated component.
    pub fn active(&self) -> usize {
        match self.kind {
            ModuleKind::Up => self.k - 1,
            ModuleKind::Low => self.k,
        }
    }

    /// 0-based column of `W` weighting the increment.
    pub fn column(&self) -> usize {
        self.k - 1
    }

    pub fn sign(&self) -> f64 {
        match self.kind {
            ModuleKind::Up => 1.0,
            ModuleKind::Low => -1.0,
        }
    }

    pub fn param_len(&self) -> usize {
        self.m * (self.n + 1)
    }

    /// Column of `W` multiplying state component `j` (`j != active`).
    pub fn position(&self, j: usize) -> usize {
        if j < self.active() {
            j
        } else {
            j - 1
        }
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let nw = self.m * (self.n - 1);
        (&p[..nw], &p[nw..nw + self.m], &p[nw + self.m..nw + 2 * self.m])
    }

    /// `sum_i W[i][c] w_i s(z_i)`; stores `s(z_i)` in `acts` when given.
    #[inline]
    pub(crate) fn increment(&self, p: &[f64], y: &[f64], mut acts: Option<&mut [f64]>) -> f64 {
        let (wm, w, b) = self.split(p);
        let n1 = self.n - 1;
        let a = self.active();
        let c = self.column();
        let (lo, hi) = (&y[..a], &y[a + 1..]);
        let mut inc = 0.0;
        for i in 0..self.m {
            let row = &wm[i * n1..(i + 1) * n1];
            let mut z = b[i];
            for (wj, yj) in row[..a].iter().zip(lo) {
                z += wj * yj;
            }
            for (wj, yj) in row[a..].iter().zip(hi) {
                z += wj * yj;
            }
            let s = self.activation.eval(z);
            if let Some(acts) = acts.as_deref_mut() {
                acts[i] = s;
            }
            inc += row[c] * w[i] * s;
        }
        inc
    }

    /// In-place module map with step `h`.
    #[inline]
    pub(crate) fn apply(&self, p: &[f64], y: &mut [f64], h: f64, acts: Option<&mut [f64]>) {
        let inc = self.increment(p, y, acts);
        let a = self.active();
        y[a] += (self.sign() * h) * inc;
    }

    /// Reverse-mode step. `y_in` is the module input, `acts` the activations
    /// recorded on the forward pass. On entry `ybar` is the adjoint of the
    /// output; on exit it is the adjoint of the input. Parameter gradients
    /// are accumulated into `g`. In linear mode the bias gradient stays zero.
    pub(crate) fn backward(&self, p: &[f64], y_in: &[f64], acts: &[f64], h: f64, ybar: &mut [f64], g: &mut [f64]) {
        let (wm, w, _) = self.split(p);
        let n1 = self.n - 1;
        let m = self.m;
        let a = self.active();
        let c = self.column();
        let coef = ybar[a] * self.sign() * h;
        if coef == 0.0 {
            return;
        }
        let train_bias = self.activation != Activation::Linear;
        let (gwm, rest) = g.split_at_mut(m * n1);
        let (gw, gb) = rest.split_at_mut(m);
        for i in 0..m {
            let row = &wm[i * n1..(i + 1) * n1];
            let s = acts[i];
            let wc = row[c];
            gw[i] += coef * wc * s;
            let zbar = coef * wc * w[i] * self.activation.derivative_from_output(s);
            if train_bias {
                gb[i] += zbar;
            }
            let grow = &mut gwm[i * n1..(i + 1) * n1];
            grow[c] += coef * w[i] * s;
            for j in 0..self.n {
                if j == a {
                    continue;
                }
                let pj = if j < a { j } else { j - 1 };
                grow[pj] += zbar * y_in[j];
                ybar[j] += zbar * row[pj];
            }
        }
    }

    /// Analytic Jacobian: identity except the active row.
    pub(crate) fn jacobian(&self, p: &[f64], y: &[f64], h: f64) -> Mat {
        let (wm, w, _) = self.split(p);
        let n1 = self.n - 1;
        let a = self.active();
        let c = self.column();
        let mut acts = vec![0.0; self.m];
        self.increment(p, y, Some(&mut acts));
        let mut jac = Mat::identity(self.n);
        let coef = self.sign() * h;
        for i in 0..self.m {
            let row = &wm[i * n1..(i + 1) * n1];
            let t = coef * row[c] * w[i] * self.activation.derivative_from_output(acts[i]);
            for j in 0..self.n {
                if j != a {
                    jac[(a, j)] += t * row[self.position(j)];
                }
            }
        }
        jac
    }
}

/// Owned parameters of a single module.
#[derive(Clone, Debug, PartialEq)]
pub struct GradModuleParams {
    pub shape: ModuleShape,
    /// `m x (n-1)`.
    pub w_mat: Mat,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl GradModuleParams {
    pub fn new(shape: ModuleShape, w_mat: Mat, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if w_mat.rows() != shape.m || w_mat.cols() != shape.n - 1 {
            return Err(Error::dim("module W", shape.m * (shape.n - 1), w_mat.rows() * w_mat.cols()));
        }
        if w.len() != shape.m {
            return Err(Error::dim("module w", shape.m, w.len()));
        }
        if b.len() != shape.m {
            return Err(Error::dim("module b", shape.m, b.len()));
        }
        Ok(GradModuleParams { shape, w_mat, w, b })
    }

    pub fn from_flat(shape: ModuleShape, p: &[f64]) -> Result<Self> {
        if p.len() != shape.param_len() {
            return Err(Error::dim("module parameters", shape.param_len(), p.len()));
        }
        let (wm, w, b) = shape.split(p);
        Ok(GradModuleParams {
            shape,
            w_mat: Mat::from_vec(shape.m, shape.n - 1, wm.to_vec())?,
            w: w.to_vec(),
            b: b.to_vec(),
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut p = self.w_mat.as_slice().to_vec();
        p.extend_from_slice(&self.w);
        p.extend_from_slice(&self.b);
        p
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.shape.n {
            return Err(Error::dim("module input", self.shape.n, y.len()));
        }
        Ok(())
    }

    pub fn forward(&self, y: &[f64], h: f64) -> Result<Vec<f64>> {
        self.check(y)?;
        let mut out = y.to_vec();
        self.shape.apply(&self.flat(), &mut out, h, None);
        Ok(out)
    }

    /// Exact inverse: the same increment subtracted, i.e. `forward(-h)`.
    pub fn inverse(&self, y: &[f64], h: f64) -> Result<Vec<f64>> {
        self.forward(y, -h)
    }

    pub fn jacobian(&self, y: &[f64], h: f64) -> Result<Mat> {
        self.check(y)?;
        Ok(self.shape.jacobian(&self.flat(), y, h))
    }
}

/// `max |M^T J^-1 M - J^-1|` for a 2x2 block `M`, `J = [[0, 1], [-1, 0]]`.
pub fn symplecticity_residual(block: [[f64; 2]; 2]) -> f64 {
    let jinv = [[0.0, -1.0], [1.0, 0.0]];
    let mul = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        out
    };
    let mt = [[block[0][0], block[1][0]], [block[0][1], block[1][1]]];
    let mtjm = mul(mt, mul(jinv, block));
    let mut r = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            r = r.max((mtjm[i][j] - jinv[i][j]).abs());
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{fd_jacobian, Rng};

    fn random_module(rng: &mut Rng, kind: ModuleKind, k: usize, n: usize, m: usize, act: Activation) -> GradModuleParams {
        let shape = ModuleShape::new(kind, k, n, m, act).unwrap();
        let p = rng.normal(0.0, 1.0, shape.param_len());
        GradModuleParams::from_flat(shape, &p).unwrap()
    }

    fn random_case(rng: &mut Rng) -> (GradModuleParams, Vec<f64>, f64) {
        let n = 2 + (rng.next_uniform(0.0, 5.0) as usize);
        let k = 1 + (rng.next_uniform(0.0, (n - 1) as f64) as usize);
        let m = 1 + (rng.next_uniform(0.0, 8.0) as usize);
        let kind = if rng.next_uniform(0.0, 1.0) < 0.5 { ModuleKind::Up } else { ModuleKind::Low };
        let act = if rng.next_uniform(0.0, 1.0) < 0.8 { Activation::Sigmoid } else { Activation::Linear };
        let module = random_module(rng, kind, k, n, m, act);
        let y = rng.normal(0.0, 1.0, n);
        let h = rng.next_uniform(-0.5, 0.5);
        (module, y, h)
    }

    #[test]
    fn hand_evaluated_up_module() {
        let shape = ModuleShape::new(ModuleKind::Up, 1, 3, 1, Activation::Sigmoid).unwrap();
        let p = GradModuleParams::new(shape, Mat::from_rows(&[[1.0, 0.0]]).unwrap(), vec![1.0], vec![0.0]).unwrap();
        let out = p.forward(&[0.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(out, vec![0.25, 0.0, 0.0]);
    }

    #[test]
    fn zero_w_or_h_is_identity() {
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let (mut module, y, h) = random_case(&mut rng);
            assert_eq!(module.forward(&y, 0.0).unwrap(), y);
            module.w.iter_mut().for_each(|v| *v = 0.0);
            assert_eq!(module.forward(&y, h).unwrap(), y);
        }
    }

    #[test]
    fn only_active_component_changes() {
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let (module, y, h) = random_case(&mut rng);
            let out = module.forward(&y, h).unwrap();
            for j in 0..y.len() {
                if j != module.shape.active() {
                    assert_eq!(out[j], y[j]);
                }
            }
        }
    }

    // Direct coding of the two-dimensional gradient modules on (p, q):
    // Up: p + h K^T diag(a) s(K q + b), Low: q - h K^T diag(a) s(K p + b),
    // where K is a column of weights.
    #[test]
    fn two_dimensional_case_is_gradient_module() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let m = 5;
            let kk = rng.normal(0.0, 1.0, m);
            let a = rng.normal(0.0, 1.0, m);
            let b = rng.normal(0.0, 1.0, m);
            let (p, q) = (rng.next_normal(0.0, 1.0), rng.next_normal(0.0, 1.0));
            let h = 0.3;
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let up_ref = p + h * (0..m).map(|i| kk[i] * a[i] * sig(kk[i] * q + b[i])).sum::<f64>();
            let low_ref = q - h * (0..m).map(|i| kk[i] * a[i] * sig(kk[i] * p + b[i])).sum::<f64>();

            let w_mat = Mat::from_vec(m, 1, kk.clone()).unwrap();
            let up_shape = ModuleShape::new(ModuleKind::Up, 1, 2, m, Activation::Sigmoid).unwrap();
            let low_shape = ModuleShape::new(ModuleKind::Low, 1, 2, m, Activation::Sigmoid).unwrap();
            let up = GradModuleParams::new(up_shape, w_mat.clone(), a.clone(), b.clone()).unwrap();
            let low = GradModuleParams::new(low_shape, w_mat, a.clone(), b.clone()).unwrap();
            let y_up = up.forward(&[p, q], h).unwrap();
            let y_low = low.forward(&[p, q], h).unwrap();
            assert!((y_up[0] - up_ref).abs() < 1e-15);
            assert_eq!(y_up[1], q);
            assert!((y_low[1] - low_ref).abs() < 1e-15);
            assert_eq!(y_low[0], p);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let (module, y, h) = random_case(&mut rng);
            let back = module.inverse(&module.forward(&y, h).unwrap(), h).unwrap();
            for (a, b) in back.iter().zip(&y) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_is_forward_with_negated_step_bitwise() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let (module, y, h) = random_case(&mut rng);
            let a = module.inverse(&y, h).unwrap();
            let b = module.forward(&y, -h).unwrap();
            assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn jacobian_structure_and_determinant() {
        let mut rng = Rng::new(6);
        for _ in 0..100 {
            let (module, y, h) = random_case(&mut rng);
            let jac = module.jacobian(&y, h).unwrap();
            let a = module.shape.active();
            for i in 0..y.len() {
                assert_eq!(jac[(i, i)], 1.0);
                if i != a {
                    for j in 0..y.len() {
                        assert_eq!(jac[(i, j)], if i == j { 1.0 } else { 0.0 });
                    }
                }
            }
            assert!((jac.det().unwrap() - 1.0).abs() < 1e-12);

            let k = module.shape.k - 1;
            let block = [[jac[(k, k)], jac[(k, k + 1)]], [jac[(k + 1, k)], jac[(k + 1, k + 1)]]];
            assert!(symplecticity_residual(block) < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let (module, y, h) = random_case(&mut rng);
            let jac = module.jacobian(&y, h).unwrap();
            let fd = fd_jacobian(|x| module.forward(x, h).unwrap(), &y, 1e-6).unwrap();
            assert!(jac.max_abs_diff(&fd) < 1e-6, "{}", jac.max_abs_diff(&fd));
        }
    }

    #[test]
    fn residual_detects_non_symplectic_block() {
        assert_eq!(symplecticity_residual([[1.0, 0.3], [0.0, 1.0]]), 0.0);
        assert!((symplecticity_residual([[2.0, 0.0], [0.0, 1.0]]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert!(ModuleShape::new(ModuleKind::Up, 0, 3, 2, Activation::Sigmoid).is_err());
        assert!(ModuleShape::new(ModuleKind::Up, 3, 3, 2, Activation::Sigmoid).is_err());
        assert!(ModuleShape::new(ModuleKind::Up, 1, 1, 2, Activation::Sigmoid).is_err());
        let mut rng = Rng::new(8);
        let module = random_module(&mut rng, ModuleKind::Low, 1, 3, 2, Activation::Sigmoid);
        assert!(module.forward(&[0.0; 4], 0.1).is_err());
    }
}
