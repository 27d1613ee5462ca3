use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{global_error, invariant_drift, linear_fit, rollout, stability_flag};
use crate::data::{check_permutation, integrate_reference, permute, unpermute, Tolerances};
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::systems::System;

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutOptions {
    pub steps: usize,
    /// Step of the learned map; also the spacing of the reference grid.
    pub h: f64,
    pub tolerances: Tolerances,
    /// Network coordinates are `permute(y, perm)` of system coordinates.
    pub permutation: Option<Vec<usize>>,
}

impl RolloutOptions {
    pub fn new(steps: usize, h: f64) -> Self {
        RolloutOptions {
            steps,
            h,
            tolerances: Tolerances::default(),
            permutation: None,
        }
    }
}

/// Predicted trajectory with its error series, all in system coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutReport {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub global_error: Vec<f64>,
    pub invariant_rel_errors: Vec<(String, Vec<f64>)>,
    pub stable: bool,
    pub diverged: bool,
    pub steps_requested: usize,
    /// Grid spacing when the state is a grid function.
    pub grid_dx: Option<f64>,
}

/// Scalar digest of one report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub stable: bool,
    pub diverged: bool,
    pub max_drift: BTreeMap<String, f64>,
    pub final_global_error: f64,
    pub max_global_error: f64,
    /// Least-squares slope of the global error against time.
    pub error_slope: f64,
    pub error_r2: f64,
    /// Final error in the `L2` grid norm, for grid-function states.
    pub final_grid_error: Option<f64>,
}

/// Mean statistics over one subset of an ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub runs: usize,
    pub mean_max_drift: BTreeMap<String, f64>,
    pub mean_final_global_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    /// Number of stable runs.
    pub n0: usize,
    /// Averages over stable runs only (prediction error convention).
    pub stable_only: AggregateStats,
    /// Averages over every run, divergent ones included with their
    /// truncated series.
    pub all_runs: AggregateStats,
}

/// Which subset an average runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    StableOnly,
    AllRuns,
}

impl EnsembleSummary {
    pub fn stats(&self, mode: Aggregation) -> &AggregateStats {
        match mode {
            Aggregation::StableOnly => &self.stable_only,
            Aggregation::AllRuns => &self.all_runs,
        }
    }
}

/// Rolls `net` out from `y0` (system coordinates) and compares against a
/// reference trajectory on the same time grid.
pub fn build_report(
    sys: &System,
    net: &Network,
    params: &[f64],
    y0: &[f64],
    opts: &RolloutOptions,
) -> Result<RolloutReport> {
    if y0.len() != sys.dim() {
        return Err(Error::dim("rollout initial state", sys.dim(), y0.len()));
    }
    if let Some(perm) = &opts.permutation {
        check_permutation(perm, sys.dim())?;
    }
    let start = match &opts.permutation {
        Some(perm) => permute(y0, perm),
        None => y0.to_vec(),
    };
    let r = rollout(net, params, &start, opts.steps, opts.h)?;
    let states: Vec<Vec<f64>> = match &opts.permutation {
        Some(perm) => r.states.iter().map(|y| unpermute(y, perm)).collect(),
        None => r.states,
    };
    let done = states.len() - 1;
    let reference: Vec<Vec<f64>> = integrate_reference(sys, y0, done as f64 * opts.h, opts.h, opts.tolerances)?
        .into_iter()
        .map(|(_, y)| y)
        .collect();
    let times = (0..=done).map(|j| j as f64 * opts.h).collect();
    let global_error = global_error(&states, &reference)?;
    let drifts = invariant_drift(&states, sys)?;
    let stable = stability_flag(&drifts, r.diverged);
    Ok(RolloutReport {
        times,
        states,
        global_error,
        invariant_rel_errors: drifts.into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
        stable,
        diverged: r.diverged,
        steps_requested: opts.steps,
        grid_dx: sys.grid_dx(),
    })
}

impl RolloutReport {
    pub fn max_drift(&self, name: &str) -> Option<f64> {
        self.invariant_rel_errors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.iter().cloned().fold(0.0, f64::max))
    }

    pub fn summary(&self) -> RolloutSummary {
        let (slope, _, r2) = linear_fit(&self.times, &self.global_error);
        RolloutSummary {
            steps_requested: self.steps_requested,
            steps_completed: self.states.len() - 1,
            stable: self.stable,
            diverged: self.diverged,
            max_drift: self
                .invariant_rel_errors
                .iter()
                .map(|(n, s)| (n.clone(), s.iter().cloned().fold(0.0, f64::max)))
                .collect(),
            final_global_error: self.global_error.last().copied().unwrap_or(0.0),
            max_global_error: self.global_error.iter().cloned().fold(0.0, f64::max),
            error_slope: slope,
            error_r2: r2,
            final_grid_error: self.grid_dx.map(|dx| {
                self.global_error.last().copied().unwrap_or(0.0) * dx.sqrt()
            }),
        }
    }

    /// Columns: `t, y0..y{n-1}, global_error, drift_<invariant>...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let n = self.states.first().map(|s| s.len()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("y{i}")));
        header.push("global_error".into());
        header.extend(self.invariant_rel_errors.iter().map(|(name, _)| format!("drift_{name}")));
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for (j, t) in self.times.iter().enumerate() {
            row.clear();
            row.push(format!("{t:?}"));
            row.extend(self.states[j].iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", self.global_error[j]));
            row.extend(self.invariant_rel_errors.iter().map(|(_, s)| format!("{:?}", s[j])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}

fn aggregate<'a>(runs: impl Iterator<Item = &'a RolloutSummary>) -> AggregateStats {
    let mut stats = AggregateStats::default();
    let mut err_sum = 0.0;
    for s in runs {
        stats.runs += 1;
        err_sum += s.final_global_error;
        for (name, d) in &s.max_drift {
            *stats.mean_max_drift.entry(name.clone()).or_insert(0.0) += d;
        }
    }
    if stats.runs > 0 {
        let k = stats.runs as f64;
        stats.mean_max_drift.values_mut().for_each(|v| *v /= k);
        stats.mean_final_global_error = err_sum / k;
    }
    stats
}

/// Stability count plus both averaging conventions.
pub fn summarize_ensemble(runs: &[RolloutSummary]) -> EnsembleSummary {
    EnsembleSummary {
        runs: runs.len(),
        n0: runs.iter().filter(|s| s.stable).count(),
        stable_only: aggregate(runs.iter().filter(|s| s.stable)),
        all_runs: aggregate(runs.iter()),
    }
}
