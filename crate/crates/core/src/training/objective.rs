//! Mean squared one-step error and its exact gradient.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{Network, ParamStore, Workspace};

/// Buffers for repeated loss/gradient evaluation of one network.
pub struct Objective<'a> {
    net: &'a Network,
    ws: Workspace,
    y: Vec<f64>,
    ybar: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(net: &'a Network) -> Self {
        Objective {
            net,
            ws: net.workspace(),
            y: vec![0.0; net.n()],
            ybar: vec![0.0; net.n()],
        }
    }

    fn check(&self, p: &[f64], ds: &Dataset) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset(ds.split.as_str()));
        }
        if ds.dim() != self.net.n() {
            return Err(Error::dim("dataset dimension", self.net.n(), ds.dim()));
        }
        if p.len() != self.net.param_count() {
            return Err(Error::dim("network parameters", self.net.param_count(), p.len()));
        }
        Ok(())
    }

    /// `(1/N) sum_j |target_j - net(input_j, tau)|^2`.
    pub fn mse(&mut self, p: &[f64], ds: &Dataset) -> Result<f64> {
        self.check(p, ds)?;
        let h = ds.tau;
        let mut total = 0.0;
        for (x, t) in ds.inputs.iter().zip(&ds.targets) {
            self.y.copy_from_slice(x);
            self.net.forward_in_place(p, &mut self.y, h, &mut self.ws);
            total += self.y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / ds.len() as f64)
    }

    /// Loss value, with its gradient written (not added) to `g`. Samples are
    /// processed one at a time in dataset order.
    pub fn mse_and_grad(&mut self, p: &[f64], ds: &Dataset, g: &mut [f64]) -> Result<f64> {
        self.check(p, ds)?;
        if g.len() != p.len() {
            return Err(Error::dim("gradient buffer", p.len(), g.len()));
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        let h = ds.tau;
        let scale = 2.0 / ds.len() as f64;
        let mut total = 0.0;
        for (x, t) in ds.inputs.iter().zip(&ds.targets) {
            self.y.copy_from_slice(x);
            self.net.forward_taped(p, &mut self.y, h, &mut self.ws)?;
            for ((yb, yv), tv) in self.ybar.iter_mut().zip(&self.y).zip(t) {
                let r = yv - tv;
                total += r * r;
                *yb = scale * r;
            }
            self.net.backward_taped(p, h, &mut self.ws, &mut self.ybar, g);
        }
        Ok(total / ds.len() as f64)
    }
}

/// Training loss of `params` on `ds` (step `h = ds.tau`).
pub fn loss(params: &ParamStore, ds: &Dataset) -> Result<f64> {
    let net = params.network()?;
    Objective::new(&net).mse(params.values(), ds)
}

/// Same formula as [`loss`], named for validation data.
pub fn accuracy(params: &ParamStore, validation: &Dataset) -> Result<f64> {
    loss(params, validation)
}

/// Exact gradient of [`loss`] with respect to the flat parameters.
pub fn grad(params: &ParamStore, ds: &Dataset) -> Result<Vec<f64>> {
    let net = params.network()?;
    let mut g = vec![0.0; net.param_count()];
    Objective::new(&net).mse_and_grad(params.values(), ds, &mut g)?;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    Ok(g)
}
