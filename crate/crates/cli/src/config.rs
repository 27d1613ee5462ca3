//! Experiment configuration files.
//!
//! One TOML file describes one experiment: the system, how data is sampled,
//! the network, the training run and the rollout protocol. Optional
//! `[[sweep]]` entries expand the experiment into labelled variants that
//! override a few fields each.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use locsymp::data::{check_permutation, flow, ic_grid, SamplingMode, SamplingSpec, Tolerances};
use locsymp::nets::{Activation, NetSpec};
use locsymp::systems::System;
use locsymp::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LOCSYMP_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output directory; defaults to `$LOCSYMP_OUT/<name>` or `runs/<name>`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Network coordinates are `y[permutation[i]]` of system coordinates.
    #[serde(default)]
    pub permutation: Option<Vec<usize>>,
    pub system: System,
    pub sampling: SamplingSpec,
    pub net: NetSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
}

/// Where rollouts start, in system coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InitialCondition {
    /// First input of a single-trajectory dataset (reconstruction).
    TrainingStart,
    /// State right after the training interval (prediction).
    #[default]
    EndOfTraining,
    /// The system's reference state.
    Reference,
    State { y: Vec<f64> },
    /// The `J` points of the rigid-body prediction grid on the unit sphere.
    IcGrid { j: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    #[serde(flatten)]
    pub initial: InitialCondition,
    /// Number of network applications; exclusive with `horizon`.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Prediction time; `steps = round(horizon / tau)`.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            initial: InitialCondition::default(),
            steps: Some(1000),
            horizon: None,
            rtol: default_tol(),
            atol: default_tol(),
        }
    }
}

/// Overrides applied on top of the base experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub label: String,
    pub tau: Option<f64>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub noise_delta: Option<f64>,
    pub permutation: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
}

/// One concrete experiment after sweep expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: Option<String>,
    pub system: System,
    pub sampling: SamplingSpec,
    pub permutation: Option<Vec<usize>>,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
    pub dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Output root: `override_dir`, else `out`, else the environment root.
    pub fn out_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(dir) = override_dir {
            return dir.to_path_buf();
        }
        if let Some(dir) = &self.out {
            return dir.clone();
        }
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }

    /// Expands sweeps and validates every variant before anything runs.
    pub fn variants(&self, out: &Path) -> CliResult<Vec<Variant>> {
        let base = Variant {
            label: None,
            system: self.system.clone(),
            sampling: self.sampling.clone(),
            permutation: self.permutation.clone(),
            net: self.net.clone(),
            train: self.train.clone(),
            rollout: self.rollout.clone(),
            dir: out.to_path_buf(),
        };
        let variants = if self.sweep.is_empty() {
            vec![base]
        } else {
            let mut seen = std::collections::BTreeSet::new();
            let mut out_variants = Vec::with_capacity(self.sweep.len());
            for point in &self.sweep {
                if point.label.is_empty() || point.label.contains(['/', '\\']) {
                    return Err(CliError::Config(format!("invalid sweep label {:?}", point.label)));
                }
                if !seen.insert(point.label.clone()) {
                    return Err(CliError::Config(format!("duplicate sweep label {:?}", point.label)));
                }
                out_variants.push(base.with_overrides(point, out)?);
            }
            out_variants
        };
        for v in &variants {
            v.validate()?;
        }
        Ok(variants)
    }
}

fn set_counts(mode: &mut SamplingMode, n_train: Option<usize>, n_val: Option<usize>) -> bool {
    let (train, val) = match mode {
        SamplingMode::SingleTrajectory { n_train, n_val, .. }
        | SamplingMode::RandomNormalIc { n_train, n_val }
        | SamplingMode::RandomSphereIc { n_train, n_val } => (n_train, n_val),
        SamplingMode::IcGrid { .. } => return n_train.is_none() && n_val.is_none(),
    };
    if let Some(n) = n_train {
        *train = n;
    }
    if let Some(n) = n_val {
        *val = n;
    }
    true
}

impl Variant {
    fn with_overrides(&self, p: &SweepPoint, out: &Path) -> CliResult<Variant> {
        let mut v = self.clone();
        v.label = Some(p.label.clone());
        v.dir = out.join(&p.label);
        if let Some(tau) = p.tau {
            v.sampling.tau = tau;
        }
        if !set_counts(&mut v.sampling.mode, p.n_train, p.n_val) {
            return Err(CliError::Config(format!("sweep {}: ic_grid sampling has no sample counts", p.label)));
        }
        if let Some(d) = p.noise_delta {
            v.sampling.noise_delta = d;
        }
        if let Some(perm) = &p.permutation {
            v.permutation = Some(perm.clone());
        }
        if let Some(k) = p.k {
            v.net.k = k;
        }
        if let Some(m) = p.m {
            v.net.m = m;
        }
        if let Some(e) = p.epochs {
            v.train.epochs = e;
        }
        if p.steps.is_some() || p.horizon.is_some() {
            v.rollout.steps = p.steps;
            v.rollout.horizon = p.horizon;
        }
        Ok(v)
    }

    pub fn name(&self) -> &str {
        self.label.as_deref().unwrap_or("base")
    }

    pub fn validate(&self) -> CliResult<()> {
        let ctx = |e: locsymp::Error| CliError::Core(e).context(format!("variant {}", self.name()));
        self.system.validate().map_err(ctx)?;
        self.sampling.validate(&self.system).map_err(ctx)?;
        self.net.validate().map_err(ctx)?;
        self.train.validate().map_err(ctx)?;
        let dim = self.system.dim();
        if self.net.n != dim {
            return Err(CliError::Config(format!(
                "variant {}: net.n = {} but {} has dimension {dim}",
                self.name(),
                self.net.n,
                self.system.name()
            )));
        }
        if let Some(perm) = &self.permutation {
            check_permutation(perm, dim).map_err(ctx)?;
        }
        if self.net.activation == Activation::Linear && self.system.advection_matrix().is_none() {
            return Err(CliError::Config(format!(
                "variant {}: linear activation can only represent linear dynamics, {} is nonlinear",
                self.name(),
                self.system.name()
            )));
        }
        self.rollout_steps()?;
        self.rollout_tolerances()?;
        match (&self.rollout.initial, &self.sampling.mode) {
            (InitialCondition::TrainingStart | InitialCondition::EndOfTraining, SamplingMode::SingleTrajectory { .. }) => {}
            (InitialCondition::TrainingStart | InitialCondition::EndOfTraining, _) => {
                return Err(CliError::Config(format!(
                    "variant {}: rollout source needs single_trajectory sampling",
                    self.name()
                )))
            }
            (InitialCondition::State { y }, _) if y.len() != dim => {
                return Err(CliError::Config(format!(
                    "variant {}: rollout state has {} components, expected {dim}",
                    self.name(),
                    y.len()
                )))
            }
            (InitialCondition::IcGrid { j }, _) if *j == 0 || dim != 3 => {
                return Err(CliError::Config(format!(
                    "variant {}: ic_grid needs J >= 1 and a 3-dimensional system",
                    self.name()
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn rollout_steps(&self) -> CliResult<usize> {
        match (self.rollout.steps, self.rollout.horizon) {
            (Some(s), None) => Ok(s),
            (None, Some(t)) if t >= 0.0 && t.is_finite() => Ok((t / self.sampling.tau).round() as usize),
            (None, Some(t)) => Err(CliError::Config(format!("rollout horizon must be >= 0, got {t}"))),
            (Some(_), Some(_)) => Err(CliError::Config(format!(
                "variant {}: set either rollout.steps or rollout.horizon, not both",
                self.name()
            ))),
            (None, None) => Err(CliError::Config(format!(
                "variant {}: rollout needs steps or horizon",
                self.name()
            ))),
        }
    }

    pub fn rollout_tolerances(&self) -> CliResult<Tolerances> {
        let t = Tolerances {
            rtol: self.rollout.rtol,
            atol: self.rollout.atol,
        };
        if t.rtol > 0.0 && t.atol > 0.0 {
            Ok(t)
        } else {
            Err(CliError::Config(format!("rollout tolerances must be positive, got {t:?}")))
        }
    }

    /// Initial states for rollouts, in system coordinates.
    pub fn initial_states(&self, ic_grid_override: Option<usize>) -> CliResult<Vec<Vec<f64>>> {
        if let Some(j) = ic_grid_override {
            if j == 0 || self.system.dim() != 3 {
                return Err(CliError::Config("--ic-grid needs J >= 1 and a 3-dimensional system".into()));
            }
            return Ok(ic_grid(j));
        }
        let single_start = || match &self.sampling.mode {
            SamplingMode::SingleTrajectory { y0, n_train, .. } => {
                Some((y0.clone().unwrap_or_else(|| self.system.reference_initial_state()), *n_train))
            }
            _ => None,
        };
        Ok(match &self.rollout.initial {
            InitialCondition::TrainingStart => vec![single_start().expect("validated").0],
            InitialCondition::EndOfTraining => {
                let (y0, n) = single_start().expect("validated");
                vec![flow(&self.system, &y0, n as f64 * self.sampling.tau, self.sampling.tolerances())?]
            }
            InitialCondition::Reference => vec![self.system.reference_initial_state()],
            InitialCondition::State { y } => vec![y.clone()],
            InitialCondition::IcGrid { j } => ic_grid(*j),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "mini"
        [system]
        kind = "rigid_body"
        [sampling]
        mode = "single_trajectory"
        n_train = 12
        n_val = 4
        tau = 0.1
        [net]
        kind = "SymLocSympNet"
        n = 3
        m = 4
        [train]
        epochs = 10
        schedule = "exponential"
        start = 1e-2
        end = 1e-6
        [rollout]
        source = "end_of_training"
        horizon = 10.0
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let vs = cfg.variants(Path::new("/tmp/x")).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].rollout_steps().unwrap(), 100);
        assert_eq!(vs[0].net.k, 1);
        assert_eq!(vs[0].train.record_every, 100);
        assert_eq!(vs[0].dir, Path::new("/tmp/x"));
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_caught_before_compute() {
        let text = MINIMAL.replace("n = 3", "n = 4");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.variants(Path::new("o")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn linear_activation_needs_linear_system() {
        let text = MINIMAL.replace("m = 4", "m = 4\nactivation = \"linear\"");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(cfg.variants(Path::new("o")).is_err());
    }

    #[test]
    fn sweep_overrides_and_directories() {
        let text = format!(
            "{MINIMAL}\n[[sweep]]\nlabel = \"a\"\ntau = 0.5\n[[sweep]]\nlabel = \"b\"\nn_train = 24\nsteps = 7\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let vs = cfg.variants(Path::new("root")).unwrap();
        assert_eq!(vs.len(), 2);
        assert_eq!(vs[0].sampling.tau, 0.5);
        assert_eq!(vs[0].rollout_steps().unwrap(), 20);
        assert_eq!(vs[0].dir, Path::new("root/a"));
        assert_eq!(vs[1].rollout_steps().unwrap(), 7);
        assert!(matches!(vs[1].sampling.mode, SamplingMode::SingleTrajectory { n_train: 24, .. }));
    }

    #[test]
    fn duplicate_sweep_labels_are_rejected() {
        let text = format!("{MINIMAL}\n[[sweep]]\nlabel = \"a\"\n[[sweep]]\nlabel = \"a\"\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(cfg.variants(Path::new("o")).is_err());
    }

    #[test]
    fn end_of_training_state_is_on_the_trajectory() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let v = &cfg.variants(Path::new("o")).unwrap()[0];
        let y = &v.initial_states(None).unwrap()[0];
        let inv = v.system.invariant_values(y).unwrap();
        assert!((inv[1].1 - 1.0).abs() < 1e-9);
        assert_eq!(v.initial_states(Some(12)).unwrap().len(), 12);
    }
}
