//! Loss, exact gradients, Adam with optional exponential learning-rate decay,
//! and the full-batch epoch loop.

mod adam;
mod init;
mod objective;

pub use adam::{Adam, AdamParams};
pub use init::{init_params, InitScheme};
pub use objective::{accuracy, grad, loss, Objective};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{NetSpec, ParamStore};
use crate::numkit::Rng;

/// RNG stream used for parameter initialization.
pub const STREAM_INIT: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr(e) = start * gamma^e` with `gamma = (end / start)^(1 / N_e)`.
    Exponential { start: f64, end: f64 },
}

fn default_record_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(flatten)]
    pub lr: LrSchedule,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the architecture's scheme when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: LrSchedule, seed: u64) -> Self {
        TrainConfig {
            epochs,
            lr,
            adam: AdamParams::default(),
            seed,
            init: None,
            record_every: default_record_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")))
            }
        };
        match self.lr {
            LrSchedule::Constant { lr } => positive("learning rate", lr)?,
            LrSchedule::Exponential { start, end } => {
                positive("initial learning rate", start)?;
                positive("final learning rate", end)?;
            }
        }
        if let Some(InitScheme::GaussianSmall { std }) = self.init {
            if !(std >= 0.0) {
                return Err(Error::InvalidSpec(format!("init std must be >= 0, got {std}")));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidSpec("record_every must be >= 1".into()));
        }
        let AdamParams { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::InvalidSpec(format!("adam parameters out of range: {:?}", self.adam)));
        }
        Ok(())
    }

    pub fn init_scheme(&self, spec: &NetSpec) -> InitScheme {
        self.init.unwrap_or_else(|| InitScheme::default_for(spec.kind))
    }
}

/// Learning rate used by the Adam step of epoch `epoch` (0-based).
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch > config.epochs {
        return Err(Error::OutOfRange(format!("epoch {epoch} beyond N_e = {}", config.epochs)));
    }
    Ok(match config.lr {
        LrSchedule::Constant { lr } => lr,
        LrSchedule::Exponential { start, end } => {
            if config.epochs == 0 {
                start
            } else {
                start * ((end / start).ln() * epoch as f64 / config.epochs as f64).exp()
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Adam steps applied before this row was measured.
    pub epoch: usize,
    pub loss: f64,
    /// Absent when there is no validation data.
    pub accuracy: Option<f64>,
    /// Rate of the next step (`lr_at(epoch)`).
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.last().map(|r| r.loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "accuracy", "lr"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.loss),
                r.accuracy.map(|a| format!("{a:?}")).unwrap_or_default(),
                format!("{:?}", r.lr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let num = |s: String| s.parse::<f64>().map_err(|e| Error::Parse(format!("history value {s:?}: {e}")));
            let epoch = field(0)
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("history epoch: {e}")))?;
            let acc = field(2);
            rows.push(HistoryRow {
                epoch,
                loss: num(field(1))?,
                accuracy: if acc.is_empty() { None } else { Some(num(acc)?) },
                lr: num(field(3))?,
            });
        }
        Ok(TrainHistory { rows })
    }
}

/// Trains a freshly initialized network. `config.epochs` must be at least 1.
pub fn train(spec: &NetSpec, train_ds: &Dataset, val_ds: &Dataset, config: &TrainConfig) -> Result<(ParamStore, TrainHistory)> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::InvalidSpec("epochs must be >= 1 for a fresh run".into()));
    }
    let mut rng = Rng::with_stream(config.seed, STREAM_INIT);
    let params = init_params(spec, config.init_scheme(spec), &mut rng)?;
    resume(params, train_ds, val_ds, config, 0)
}

/// Continues training from `params`. Row epochs are offset by `start_epoch`,
/// the schedule restarts at `lr_at(0)`, and Adam moments start at zero.
/// With `config.epochs == 0` the parameters are returned unchanged.
pub fn resume(
    mut params: ParamStore,
    train_ds: &Dataset,
    val_ds: &Dataset,
    config: &TrainConfig,
    start_epoch: usize,
) -> Result<(ParamStore, TrainHistory)> {
    config.validate()?;
    let net = params.network()?;
    if train_ds.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    if !val_ds.is_empty() && val_ds.tau != train_ds.tau {
        return Err(Error::InvalidSpec(format!(
            "training tau {} and validation tau {} differ",
            train_ds.tau, val_ds.tau
        )));
    }
    for ds in [train_ds, val_ds] {
        if ds.dim() != net.n() {
            return Err(Error::dim("dataset dimension", net.n(), ds.dim()));
        }
    }

    let mut history = TrainHistory::default();
    let mut objective = Objective::new(&net);
    let mut val_objective = Objective::new(&net);
    let mut adam = Adam::new(net.param_count(), config.adam);
    let mut g = vec![0.0; net.param_count()];

    let diverged = |epoch: usize, reason: String, history: &TrainHistory| Error::Diverged {
        epoch: start_epoch + epoch,
        reason,
        partial: Some(Box::new(history.clone())),
    };

    for e in 0..=config.epochs {
        let record = e % config.record_every == 0 || e == config.epochs;
        let last = e == config.epochs;
        let loss = if last {
            objective.mse(params.values(), train_ds)
        } else {
            objective.mse_and_grad(params.values(), train_ds, &mut g)
        };
        let loss = match loss {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err(diverged(e, format!("training loss is {l}"), &history)),
            Err(err) if err.is_divergence() => return Err(diverged(e, err.to_string(), &history)),
            Err(err) => return Err(err),
        };
        if record {
            let accuracy = if val_ds.is_empty() {
                None
            } else {
                Some(val_objective.mse(params.values(), val_ds)?)
            };
            history.rows.push(HistoryRow {
                epoch: start_epoch + e,
                loss,
                accuracy,
                lr: lr_at(config, e)?,
            });
        }
        if last {
            break;
        }
        if let Err(err) = adam.step(params.values_mut(), &g, lr_at(config, e)?) {
            return Err(diverged(e, err.to_string(), &history));
        }
    }
    Ok((params, history))
}
