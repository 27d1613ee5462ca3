//! Ground-truth trajectories and one-step training datasets.

mod integrate;
mod io;

pub use integrate::{flow, integrate_reference, Tolerances};
pub use io::{read_dataset, write_dataset, DatasetHeader};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::systems::System;

/// RNG stream used for sampling initial conditions.
pub const STREAM_SAMPLING: u64 = 0;
/// RNG stream used for training-data perturbations.
pub const STREAM_NOISE: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: System,
    pub sampling: SamplingMode,
    pub seed: u64,
    /// Component order relative to the system state, when permuted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

/// Paired one-step samples `target_i ~ flow_tau(input_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub tau: f64,
    pub split: Split,
    pub noise_delta: f64,
    pub provenance: Provenance,
}

impl Dataset {
    /// Pairs not tied to a simulated system; the provenance records a
    /// zero-speed advection grid of matching dimension.
    pub fn synthetic(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, tau: f64, split: Split) -> Result<Dataset> {
        let n = inputs.first().map(|v| v.len()).unwrap_or(0);
        let count = inputs.len();
        let provenance = Provenance {
            system: System::Advection { n, c: 0.0 },
            sampling: SamplingMode::RandomNormalIc {
                n_train: count,
                n_val: 0,
            },
            seed: 0,
            permutation: None,
        };
        Dataset::new(inputs, targets, tau, split, provenance)
    }

    pub fn new(
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        tau: f64,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::dim("dataset pairs", inputs.len(), targets.len()));
        }
        if !(tau > 0.0) {
            return Err(Error::OutOfRange(format!("time step tau = {tau}")));
        }
        let dim = provenance.system.dim();
        for v in inputs.iter().chain(&targets) {
            if v.len() != dim {
                return Err(Error::dim("dataset sample", dim, v.len()));
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            tau,
            split,
            noise_delta: 0.0,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.provenance.system.dim()
    }

    /// Reorders state components: sample component `i` becomes old component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Dataset> {
        check_permutation(perm, self.dim())?;
        let apply = |v: &Vec<f64>| permute(v, perm);
        let mut out = self.clone();
        out.inputs = self.inputs.iter().map(apply).collect();
        out.targets = self.targets.iter().map(apply).collect();
        out.provenance.permutation = Some(match &self.provenance.permutation {
            Some(prev) => perm.iter().map(|&i| prev[i]).collect(),
            None => perm.to_vec(),
        });
        Ok(out)
    }
}

pub fn check_permutation(perm: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if perm.len() != dim {
        return Err(Error::dim("permutation", dim, perm.len()));
    }
    for &p in perm {
        if p >= dim || seen[p] {
            return Err(Error::InvalidSpec(format!("{perm:?} is not a permutation of 0..{dim}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// `out[i] = v[perm[i]]`.
pub fn permute(v: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&i| v[i]).collect()
}

/// Inverse of [`permute`].
pub fn unpermute(v: &[f64], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = v[i];
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Consecutive pairs of one trajectory: `N` training pairs then `M`
    /// validation pairs continuing the same trajectory.
    SingleTrajectory {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        y0: Option<Vec<f64>>,
        n_train: usize,
        n_val: usize,
    },
    /// Components of each initial condition drawn from `N(0, 1)`.
    RandomNormalIc { n_train: usize, n_val: usize },
    /// Area-uniform points on the unit sphere (3-dimensional systems).
    RandomSphereIc { n_train: usize, n_val: usize },
    /// The deterministic sphere grid of [`ic_grid`]; training split only.
    IcGrid { j: usize },
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(flatten)]
    pub mode: SamplingMode,
    pub tau: f64,
    #[serde(default)]
    pub noise_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
}

impl SamplingSpec {
    pub fn new(mode: SamplingMode, tau: f64) -> Self {
        SamplingSpec {
            mode,
            tau,
            noise_delta: 0.0,
            seed: 0,
            rtol: default_tol(),
            atol: default_tol(),
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
        }
    }

    pub fn validate(&self, sys: &System) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidSpec(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.noise_delta >= 0.0) {
            return Err(Error::InvalidSpec(format!("noise delta must be >= 0, got {}", self.noise_delta)));
        }
        match &self.mode {
            SamplingMode::SingleTrajectory { y0: Some(y0), .. } if y0.len() != sys.dim() => {
                Err(Error::dim("sampling y0", sys.dim(), y0.len()))
            }
            SamplingMode::RandomSphereIc { .. } | SamplingMode::IcGrid { .. } if sys.dim() != 3 => {
                Err(Error::InvalidSpec(format!("sphere sampling needs a 3-dimensional system, {} has {}", sys.name(), sys.dim())))
            }
            SamplingMode::IcGrid { j: 0 } => Err(Error::InvalidSpec("ic grid needs J >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// Builds the training and validation datasets. Noise, when requested, is
/// applied to the training split only.
pub fn build_dataset(sys: &System, spec: &SamplingSpec) -> Result<(Dataset, Dataset)> {
    sys.validate()?;
    spec.validate(sys)?;
    let tol = spec.tolerances();
    let tau = spec.tau;
    let provenance = Provenance {
        system: sys.clone(),
        sampling: spec.mode.clone(),
        seed: spec.seed,
        permutation: None,
    };
    let mut rng = Rng::with_stream(spec.seed, STREAM_SAMPLING);

    let one_step = |ics: Vec<Vec<f64>>, offset: usize| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut targets = Vec::with_capacity(ics.len());
        for (i, x) in ics.iter().enumerate() {
            let y = flow(sys, x, tau, tol).map_err(|e| Error::Integration {
                index: offset + i,
                source: Box::new(e),
            })?;
            targets.push(y);
        }
        Ok((ics, targets))
    };

    let ((tx, ty), (vx, vy)) = match &spec.mode {
        SamplingMode::SingleTrajectory { y0, n_train, n_val } => {
            let y0 = y0.clone().unwrap_or_else(|| sys.reference_initial_state());
            let total = n_train + n_val;
            let traj = integrate_reference(sys, &y0, total as f64 * tau, tau, tol)?;
            let states: Vec<Vec<f64>> = traj.into_iter().map(|(_, y)| y).collect();
            let pairs = |range: std::ops::Range<usize>| {
                (
                    range.clone().map(|j| states[j].clone()).collect::<Vec<_>>(),
                    range.map(|j| states[j + 1].clone()).collect::<Vec<_>>(),
                )
            };
            (pairs(0..*n_train), pairs(*n_train..total))
        }
        SamplingMode::RandomNormalIc { n_train, n_val } => {
            let n = sys.dim();
            let train: Vec<_> = (0..*n_train).map(|_| rng.normal(0.0, 1.0, n)).collect();
            let val: Vec<_> = (0..*n_val).map(|_| rng.normal(0.0, 1.0, n)).collect();
            (one_step(train, 0)?, one_step(val, *n_train)?)
        }
        SamplingMode::RandomSphereIc { n_train, n_val } => {
            let train: Vec<_> = (0..*n_train).map(|_| sphere_point(&mut rng)).collect();
            let val: Vec<_> = (0..*n_val).map(|_| sphere_point(&mut rng)).collect();
            (one_step(train, 0)?, one_step(val, *n_train)?)
        }
        SamplingMode::IcGrid { j } => (one_step(ic_grid(*j), 0)?, (Vec::new(), Vec::new())),
    };

    let mut train = Dataset::new(tx, ty, tau, Split::Train, provenance.clone())?;
    let validation = Dataset::new(vx, vy, tau, Split::Validation, provenance)?;
    if spec.noise_delta > 0.0 {
        let mut noise = Rng::with_stream(spec.seed, STREAM_NOISE);
        train = add_noise(&train, spec.noise_delta, &mut noise);
    }
    Ok((train, validation))
}

/// Area-uniform point on the unit sphere: `z ~ U(-1, 1)`, azimuth `~ U(0, 2 pi)`.
pub fn sphere_point(rng: &mut Rng) -> Vec<f64> {
    let z = rng.next_uniform(-1.0, 1.0);
    let az = rng.next_uniform(0.0, 2.0 * PI);
    let rho = (1.0 - z * z).max(0.0).sqrt();
    vec![rho * az.cos(), rho * az.sin(), z]
}

/// Adds independent `U(-delta, delta)` noise to every component of every
/// input and target. Validation datasets are returned unchanged.
pub fn add_noise(ds: &Dataset, delta: f64, rng: &mut Rng) -> Dataset {
    assert!(delta >= 0.0, "noise magnitude must be non-negative");
    let mut out = ds.clone();
    if delta == 0.0 || ds.split == Split::Validation {
        return out;
    }
    for (x, y) in out.inputs.iter_mut().zip(out.targets.iter_mut()) {
        for v in x.iter_mut().chain(y.iter_mut()) {
            *v += rng.next_uniform(-delta, delta);
        }
    }
    out.noise_delta = delta;
    out
}

/// Spherical angles `(phi_j, theta_j)` of the prediction grid,
/// `phi_j = (1 + 2j) D / 2`, `theta_j = -(1 + 2j) D / 4`, `D = pi / J`.
pub fn ic_grid_angles(j_count: usize) -> Vec<(f64, f64)> {
    let delta = PI / j_count as f64;
    (0..j_count)
        .map(|j| {
            let odd = (1 + 2 * j) as f64;
            (odd * delta / 2.0, -odd * delta / 4.0)
        })
        .collect()
}

/// Unit vectors of the prediction grid, `theta` taken as latitude:
/// `(cos theta cos phi, cos theta sin phi, sin theta)`.
pub fn ic_grid(j_count: usize) -> Vec<Vec<f64>> {
    ic_grid_angles(j_count)
        .into_iter()
        .map(|(phi, theta)| vec![theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()])
        .collect()
}
