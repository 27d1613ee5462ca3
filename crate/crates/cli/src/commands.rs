//! The subcommands. Each works on the variants of one experiment config.
//!
//! Layout under a variant directory:
//!
//! ```text
//! data/train.{json,csv}   data/val.{json,csv}
//! run_<seed>/checkpoint.json   run_<seed>/history.csv
//! run_<seed>/rollout/ic<i>.{csv,json}
//! rollout_summary.json    report.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use locsymp::data::{build_dataset, read_dataset, write_dataset, Dataset};
use locsymp::metrics::{build_report, summarize_ensemble, EnsembleSummary, RolloutOptions, RolloutSummary};
use locsymp::nets::Checkpoint;
use locsymp::training::{resume, train, TrainHistory};
use locsymp::verify::{self, Scope};
use locsymp::Error;

use crate::config::{ExperimentConfig, Variant};
use crate::error::{CliError, CliResult};

pub fn train_path(dir: &Path) -> PathBuf {
    dir.join("data").join("train.json")
}

pub fn val_path(dir: &Path) -> PathBuf {
    dir.join("data").join("val.json")
}

pub fn run_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}"))
}

/// Seeds of the runs addressed by `--seed` / `--ensemble`.
pub fn run_seeds(base: u64, ensemble: Option<usize>) -> Vec<u64> {
    (0..ensemble.unwrap_or(1) as u64).map(|i| base + i).collect()
}

/// Maps `f` over `items` on up to `available_parallelism` threads,
/// keeping input order in the output.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    pub seed: Option<u64>,
    pub delta: Option<f64>,
}

pub fn generate(variants: &[Variant], args: &GenerateArgs) -> CliResult<()> {
    for v in variants {
        let mut sampling = v.sampling.clone();
        if let Some(seed) = args.seed {
            sampling.seed = seed;
        }
        if let Some(delta) = args.delta {
            sampling.noise_delta = delta;
        }
        sampling.validate(&v.system)?;
        let (mut tr, mut va) = build_dataset(&v.system, &sampling)?;
        if let Some(perm) = &v.permutation {
            tr = tr.permuted(perm)?;
            va = va.permuted(perm)?;
        }
        write_dataset(&train_path(&v.dir), &tr)?;
        write_dataset(&val_path(&v.dir), &va)?;
        println!(
            "{}: wrote {} training and {} validation pairs to {}",
            v.name(),
            tr.len(),
            va.len(),
            v.dir.join("data").display()
        );
    }
    Ok(())
}

fn load_datasets(v: &Variant) -> CliResult<(Dataset, Dataset)> {
    let load = |p: PathBuf| {
        read_dataset(&p).map_err(|e| match e {
            Error::Io(io) => CliError::Failed(format!("cannot read {} ({io}); run `generate` first", p.display())),
            e => CliError::Core(e),
        })
    };
    let tr = load(train_path(&v.dir))?;
    let va = load(val_path(&v.dir))?;
    for ds in [&tr, &va] {
        if ds.dim() != v.net.n || ds.tau != v.sampling.tau {
            return Err(CliError::Config(format!(
                "{}: dataset (n = {}, tau = {}) does not match the config (n = {}, tau = {}); regenerate it",
                v.name(),
                ds.dim(),
                ds.tau,
                v.net.n,
                v.sampling.tau
            )));
        }
        if ds.provenance.permutation != v.permutation {
            return Err(CliError::Config(format!(
                "{}: dataset permutation {:?} differs from the config's {:?}; regenerate it",
                v.name(),
                ds.provenance.permutation,
                v.permutation
            )));
        }
    }
    Ok((tr, va))
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub seed: Option<u64>,
    pub ensemble: Option<usize>,
    pub epochs: Option<usize>,
    pub resume: Option<PathBuf>,
}

fn checkpoint_metadata(cfg: &ExperimentConfig, v: &Variant, history: &TrainHistory) -> BTreeMap<String, serde_json::Value> {
    let mut meta = BTreeMap::new();
    meta.insert("experiment".into(), cfg.name.clone().into());
    meta.insert("variant".into(), v.name().into());
    meta.insert("system".into(), v.system.name().into());
    if let Some(perm) = &v.permutation {
        meta.insert("permutation".into(), serde_json::json!(perm));
    }
    if let Some(l) = history.final_loss() {
        meta.insert("final_loss".into(), l.into());
    }
    meta
}

fn train_one(cfg: &ExperimentConfig, v: &Variant, tr: &Dataset, va: &Dataset, seed: u64, args: &TrainArgs) -> CliResult<String> {
    let mut tc = v.train.clone();
    tc.seed = seed;
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    let dir = run_dir(&v.dir, seed);
    std::fs::create_dir_all(&dir)?;
    let history_path = dir.join("history.csv");
    let (result, previous) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.params.spec() != &v.net {
                return Err(CliError::Config(format!("checkpoint {} was trained with a different net", path.display())));
            }
            let previous = TrainHistory::read_csv(&path.with_file_name("history.csv")).ok();
            let start = ck.epochs;
            (
                resume(ck.params.clone(), tr, va, &tc, start).map(|(p, h)| (p, h, start, Some(ck))),
                previous,
            )
        }
        None => (train(&v.net, tr, va, &tc).map(|(p, h)| (p, h, 0, None)), None),
    };
    let join = |mut prev: Option<TrainHistory>, new: TrainHistory| match prev.take() {
        Some(mut h) => {
            let start = new.rows.first().map(|r| r.epoch).unwrap_or(0);
            h.rows.retain(|r| r.epoch < start);
            h.rows.extend(new.rows);
            h
        }
        None => new,
    };
    match result {
        Ok((params, history, start, old)) => {
            let history = join(previous, history);
            history.write_csv(&history_path)?;
            let mut ck = Checkpoint::new(params, seed, tr.tau, start + tc.epochs);
            ck.metadata = match old {
                Some(old) if tc.epochs == 0 => old.metadata,
                _ => checkpoint_metadata(cfg, v, &history),
            };
            ck.save(&dir.join("checkpoint.json"))?;
            Ok(format!(
                "{} seed {seed}: final loss {:.6e} after {} epochs",
                v.name(),
                history.final_loss().unwrap_or(f64::NAN),
                ck.epochs
            ))
        }
        Err(Error::Diverged { epoch, reason, partial }) => {
            let partial = join(previous, partial.map(|b| *b).unwrap_or_default());
            partial.write_csv(&history_path)?;
            Err(CliError::Core(Error::Diverged {
                epoch,
                reason,
                partial: None,
            })
            .context(format!("{} seed {seed} (partial history in {})", v.name(), history_path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, variants: &[Variant], args: &TrainArgs) -> CliResult<()> {
    if args.resume.is_some() && (variants.len() > 1 || args.ensemble.is_some_and(|n| n > 1)) {
        return Err(CliError::Config("--resume continues a single run; drop --ensemble and sweeps".into()));
    }
    let mut first_err: Option<CliError> = None;
    for v in variants {
        let (tr, va) = load_datasets(v)?;
        let base = match (&args.resume, args.seed) {
            (_, Some(s)) => s,
            (Some(p), None) => Checkpoint::load(p)?.seed,
            (None, None) => v.train.seed,
        };
        let seeds = run_seeds(base, args.ensemble);
        let results = par_map(&seeds, |&s| train_one(cfg, v, &tr, &va, s, args));
        for r in results {
            match r {
                Ok(line) => println!("{line}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    // a divergence outranks other failures for the exit status
                    if first_err.as_ref().is_none_or(|f| f.exit_code() != 3) {
                        first_err = Some(e);
                    }
                }
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

#[derive(Clone, Debug, Default)]
pub struct RolloutArgs {
    pub seed: Option<u64>,
    pub ensemble: Option<usize>,
    pub steps: Option<usize>,
    pub ic_grid: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

/// Every (run, initial condition) summary of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutFile {
    pub variant: String,
    pub steps: usize,
    pub h: f64,
    pub seeds: Vec<u64>,
    pub initial_conditions: usize,
    pub ensemble: EnsembleSummary,
    pub runs: Vec<RunRollouts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRollouts {
    pub seed: u64,
    pub reports: Vec<RolloutSummary>,
}

fn rollout_checkpoint(v: &Variant, ck: &Checkpoint, dir: &Path, starts: &[Vec<f64>], opts: &RolloutOptions) -> CliResult<Vec<RolloutSummary>> {
    let net = ck.params.network()?;
    let out = dir.join("rollout");
    std::fs::create_dir_all(&out)?;
    let mut summaries = Vec::with_capacity(starts.len());
    for (i, y0) in starts.iter().enumerate() {
        let report = build_report(&v.system, &net, ck.params.values(), y0, opts)?;
        report.write_csv(&out.join(format!("ic{i}.csv")))?;
        report.write_summary_json(&out.join(format!("ic{i}.json")))?;
        summaries.push(report.summary());
    }
    Ok(summaries)
}

pub fn cmd_rollout(variants: &[Variant], args: &RolloutArgs) -> CliResult<()> {
    if args.checkpoint.is_some() && variants.len() > 1 {
        return Err(CliError::Config("--checkpoint needs a config without sweeps".into()));
    }
    for v in variants {
        let steps = match args.steps {
            Some(s) => s,
            None => v.rollout_steps()?,
        };
        let starts = v.initial_states(args.ic_grid)?;
        let mut opts = RolloutOptions::new(steps, v.sampling.tau);
        opts.tolerances = v.rollout_tolerances()?;
        opts.permutation = v.permutation.clone();

        let targets: Vec<(u64, PathBuf, PathBuf)> = match &args.checkpoint {
            Some(p) => {
                let ck = Checkpoint::load(p)?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                vec![(ck.seed, p.clone(), dir)]
            }
            None => run_seeds(args.seed.unwrap_or(v.train.seed), args.ensemble)
                .into_iter()
                .map(|s| {
                    let dir = run_dir(&v.dir, s);
                    (s, dir.join("checkpoint.json"), dir)
                })
                .collect(),
        };
        let results = par_map(&targets, |(seed, path, dir)| -> CliResult<RunRollouts> {
            let ck = Checkpoint::load(path).map_err(|e| CliError::Core(e).context(path.display().to_string()))?;
            if ck.params.spec() != &v.net {
                return Err(CliError::Config(format!("checkpoint {} does not match the config's net", path.display())));
            }
            if ck.tau != v.sampling.tau {
                return Err(CliError::Config(format!(
                    "checkpoint {} was trained at tau = {}, config has {}",
                    path.display(),
                    ck.tau,
                    v.sampling.tau
                )));
            }
            Ok(RunRollouts {
                seed: *seed,
                reports: rollout_checkpoint(v, &ck, dir, &starts, &opts)?,
            })
        });
        let runs = results.into_iter().collect::<CliResult<Vec<_>>>()?;
        let all: Vec<RolloutSummary> = runs.iter().flat_map(|r| r.reports.iter().cloned()).collect();
        let ensemble = summarize_ensemble(&all);
        let file = RolloutFile {
            variant: v.name().into(),
            steps,
            h: v.sampling.tau,
            seeds: runs.iter().map(|r| r.seed).collect(),
            initial_conditions: starts.len(),
            ensemble,
            runs,
        };
        let summary_dir = match &args.checkpoint {
            Some(_) => targets[0].2.clone(),
            None => v.dir.clone(),
        };
        std::fs::create_dir_all(&summary_dir)?;
        std::fs::write(summary_dir.join("rollout_summary.json"), serde_json::to_string_pretty(&file)?)?;
        let drifts: Vec<String> = file
            .ensemble
            .stable_only
            .mean_max_drift
            .iter()
            .map(|(k, d)| format!("{k} {d:.3e}"))
            .collect();
        println!(
            "{}: {} rollouts of {steps} steps, n0 = {} stable; stable-only mean max drift: {}",
            v.name(),
            file.ensemble.runs,
            file.ensemble.n0,
            if drifts.is_empty() { "-".to_string() } else { drifts.join(", ") }
        );
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct VerifyArgs {
    pub scope: Option<Scope>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Structural checks of a stored network at a few random states.
fn checkpoint_checks(ck: &Checkpoint, seed: u64) -> CliResult<Vec<verify::Check>> {
    let net = ck.params.network()?;
    let mut rng = locsymp::numkit::Rng::new(seed);
    let mut roundtrip = 0.0f64;
    let mut det = 0.0f64;
    for _ in 0..10 {
        let y = rng.normal(0.0, 1.0, net.n());
        let fwd = net.forward(ck.params.values(), &y, ck.tau)?;
        let back = net.inverse(ck.params.values(), &fwd, ck.tau)?;
        roundtrip = roundtrip.max(locsymp::numkit::max_abs_diff_vec(&back, &y));
        let jac = net.jacobian_fd(ck.params.values(), &y, ck.tau, 1e-5)?;
        det = det.max((jac.det()? - 1.0).abs());
    }
    let check = |name: &str, value: f64, threshold: f64| verify::Check {
        name: name.into(),
        value,
        threshold,
        lower_bound: false,
        passed: value < threshold,
    };
    Ok(vec![
        check("checkpoint forward/inverse round trip", roundtrip, 1e-12),
        check("checkpoint finite-difference |det J - 1|", det, 1e-5),
    ])
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let mut report = verify::run(args.scope.unwrap_or(Scope::All), args.seed)?;
    if let Some(p) = &args.checkpoint {
        let ck = Checkpoint::load(p).map_err(|e| CliError::Core(e).context(p.display().to_string()))?;
        report.checks.extend(checkpoint_checks(&ck, args.seed)?);
    }
    for c in &report.checks {
        let op = if c.lower_bound { ">" } else { "<" };
        println!(
            "{} {}: {:.3e} {op} {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Failed(format!("{failed} verification check(s) failed")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: Option<usize>,
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// True when the history exists but no checkpoint was written.
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub tau: f64,
    pub runs: Vec<RunSummary>,
    pub mean_final_loss: Option<f64>,
    pub rollout: Option<EnsembleSummary>,
}

fn run_seed_dirs(dir: &Path) -> CliResult<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(seed) = name.to_str().and_then(|n| n.strip_prefix("run_")).and_then(|s| s.parse().ok()) {
            out.push((seed, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn cmd_report(cfg: &ExperimentConfig, variants: &[Variant], out: &Path) -> CliResult<()> {
    let mut reports = Vec::with_capacity(variants.len());
    for v in variants {
        let mut runs = Vec::new();
        for (seed, dir) in run_seed_dirs(&v.dir)? {
            let history = TrainHistory::read_csv(&dir.join("history.csv")).ok();
            let ck = dir.join("checkpoint.json");
            let epochs = Checkpoint::load(&ck).ok().map(|c| c.epochs);
            let last = history.as_ref().and_then(|h| h.last().cloned());
            runs.push(RunSummary {
                seed,
                epochs,
                final_loss: last.as_ref().map(|r| r.loss),
                final_accuracy: last.and_then(|r| r.accuracy),
                diverged: history.is_some() && !ck.exists(),
            });
        }
        let losses: Vec<f64> = runs.iter().filter_map(|r| r.final_loss).collect();
        let rollout = std::fs::read_to_string(v.dir.join("rollout_summary.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<RolloutFile>(&t).ok())
            .map(|f| f.ensemble);
        let rep = VariantReport {
            variant: v.name().into(),
            tau: v.sampling.tau,
            mean_final_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            runs,
            rollout,
        };
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:<16} tau {:<6} runs {:<3} mean final loss {:<10} n0 {}",
            rep.variant,
            rep.tau,
            rep.runs.len(),
            fmt(rep.mean_final_loss),
            rep.rollout.as_ref().map_or("-".to_string(), |e| format!("{}/{}", e.n0, e.runs))
        );
        reports.push(rep);
    }
    std::fs::create_dir_all(out)?;
    let doc = serde_json::json!({ "experiment": cfg.name, "variants": reports });
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
