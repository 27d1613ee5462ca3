//! Fully-connected subnets of the coupling baseline.
//!
//! `l` hidden layers of width `m` with the chosen activation and a linear
//! output layer. Flat layout per layer: weights (`out x in`, row-major) then
//! biases.

use super::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub output: usize,
    pub width: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl MlpShape {
    /// Fan-in and fan-out of layer `i` (`0..=hidden`).
    pub fn layer_dims(&self, i: usize) -> (usize, usize) {
        let fan_in = if i == 0 { self.input } else { self.width };
        let fan_out = if i == self.hidden { self.output } else { self.width };
        (fan_in, fan_out)
    }

    pub fn layer_count(&self) -> usize {
        self.hidden + 1
    }

    pub fn param_len(&self) -> usize {
        (0..self.layer_count())
            .map(|i| {
                let (fi, fo) = self.layer_dims(i);
                fo * fi + fo
            })
            .sum()
    }

    /// `(offset, fan_in, fan_out)` of each layer's weight block; its biases
    /// follow at `offset + fan_in * fan_out`.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        (0..self.layer_count()).map(move |i| {
            let (fi, fo) = self.layer_dims(i);
            let here = off;
            off += fo * fi + fo;
            (here, fi, fo)
        })
    }

    /// Hidden activations are written to `hidden` (`hidden * width` values);
    /// the output is added to `out`.
    pub(crate) fn forward_add(&self, p: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let m = self.width;
        for (i, (off, fi, fo)) in self.layers().enumerate() {
            let wts = &p[off..off + fi * fo];
            let bias = &p[off + fi * fo..off + fi * fo + fo];
            let (prev, rest) = hidden.split_at_mut(i * m);
            let input: &[f64] = if i == 0 { x } else { &prev[(i - 1) * m..] };
            if i == self.hidden {
                for r in 0..fo {
                    let mut z = bias[r];
                    for (wv, xv) in wts[r * fi..(r + 1) * fi].iter().zip(input) {
                        z += wv * xv;
                    }
                    out[r] += z;
                }
            } else {
                let dst = &mut rest[..m];
                for r in 0..fo {
                    let mut z = bias[r];
                    for (wv, xv) in wts[r * fi..(r + 1) * fi].iter().zip(input) {
                        z += wv * xv;
                    }
                    dst[r] = self.activation.eval(z);
                }
            }
        }
    }

    /// Scratch length needed by [`MlpShape::backward`].
    pub fn scratch_len(&self) -> usize {
        2 * self.width.max(self.output).max(self.input)
    }

    /// Reverse mode: given `out_bar`, accumulates parameter gradients into
    /// `g` and the input adjoint into `x_bar`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        hidden: &[f64],
        out_bar: &[f64],
        x_bar: &mut [f64],
        g: &mut [f64],
        scratch: &mut [f64],
    ) {
        let m = self.width;
        let half = scratch.len() / 2;
        let (mut cur, mut next) = scratch.split_at_mut(half);
        cur[..self.output].copy_from_slice(out_bar);
        let mut off = self.param_len();
        for i in (0..self.layer_count()).rev() {
            let (fi, fo) = self.layer_dims(i);
            off -= fi * fo + fo;
            let wts = &p[off..off + fi * fo];
            let input: &[f64] = if i == 0 { x } else { &hidden[(i - 1) * m..i * m] };
            let (gw, gb) = g[off..off + fi * fo + fo].split_at_mut(fi * fo);
            // cur holds the adjoint of this layer's pre-activation
            for r in 0..fo {
                let zb = cur[r];
                gb[r] += zb;
                for (gv, xv) in gw[r * fi..(r + 1) * fi].iter_mut().zip(input) {
                    *gv += zb * xv;
                }
            }
            for c in 0..fi {
                let mut acc = 0.0;
                for r in 0..fo {
                    acc += cur[r] * wts[r * fi + c];
                }
                if i == 0 {
                    x_bar[c] += acc;
                } else {
                    next[c] = acc * self.activation.derivative_from_output(input[c]);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn shape(input: usize, output: usize, width: usize, hidden: usize) -> MlpShape {
        MlpShape {
            input,
            output,
            width,
            hidden,
            activation: Activation::Sigmoid,
        }
    }

    #[test]
    fn parameter_count_formula() {
        // Up coupling of n = 3, s = 1: input n - s = 2, output s = 1
        for (m, l) in [(16, 1), (8, 3), (1, 2)] {
            let s = shape(2, 1, m, l);
            assert_eq!(s.param_len(), (3 + 1 + (m + 1) * (l - 1)) * m + 1);
        }
    }

    #[test]
    fn single_hidden_layer_by_hand() {
        let s = shape(1, 1, 1, 1);
        // hidden: sigmoid(2 x + 1), output: 3 h - 1
        let p = [2.0, 1.0, 3.0, -1.0];
        let mut hidden = [0.0];
        let mut out = [10.0];
        s.forward_add(&p, &[0.5], &mut hidden, &mut out);
        let h = 1.0 / (1.0 + (-2.0f64).exp());
        assert_eq!(hidden[0], h);
        assert!((out[0] - (10.0 + 3.0 * h - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(9);
        for &(i, o, m, l) in &[(2, 1, 4, 1), (1, 2, 3, 2), (3, 3, 5, 3)] {
            let s = shape(i, o, m, l);
            let p = rng.normal(0.0, 0.7, s.param_len());
            let x = rng.normal(0.0, 1.0, i);
            let ob = rng.normal(0.0, 1.0, o);
            let eval = |p: &[f64], x: &[f64]| {
                let mut hid = vec![0.0; l * m];
                let mut out = vec![0.0; o];
                s.forward_add(p, x, &mut hid, &mut out);
                out.iter().zip(&ob).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut hid = vec![0.0; l * m];
            let mut out = vec![0.0; o];
            s.forward_add(&p, &x, &mut hid, &mut out);
            let mut g = vec![0.0; p.len()];
            let mut xb = vec![0.0; i];
            let mut scratch = vec![0.0; s.scratch_len()];
            s.backward(&p, &x, &hid, &ob, &mut xb, &mut g, &mut scratch);
            let eps = 1e-6;
            for j in 0..p.len() {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[j] += eps;
                pm[j] -= eps;
                let fd = (eval(&pp, &x) - eval(&pm, &x)) / (2.0 * eps);
                assert!((fd - g[j]).abs() < 1e-8, "param {j}: {fd} vs {}", g[j]);
            }
            for j in 0..i {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (eval(&p, &xp) - eval(&p, &xm)) / (2.0 * eps);
                assert!((fd - xb[j]).abs() < 1e-8);
            }
        }
    }
}
