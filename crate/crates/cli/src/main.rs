use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use locsymp::verify::Scope;
use locsymp_cli::commands::{self, GenerateArgs, RolloutArgs, TrainArgs, VerifyArgs};
use locsymp_cli::{CliResult, ExperimentConfig};

/// Learn flow maps of volume-preserving dynamics with locally-symplectic
/// networks.
///
/// Exit status: 0 success, 2 invalid input, 3 numerical divergence,
/// 1 any other failure.
#[derive(Parser)]
#[command(name = "locsymp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and $LOCSYMP_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the reference system and write training/validation data.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Uniform noise magnitude added to the training pairs.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Train networks on generated data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Seed of the (first) run.
        #[arg(long)]
        seed: Option<u64>,
        /// Train this many runs with consecutive seeds.
        #[arg(long)]
        ensemble: Option<usize>,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll trained networks out and compare with the reference flow.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Seed of the (first) run.
        #[arg(long)]
        seed: Option<u64>,
        /// Roll out this many runs with consecutive seeds.
        #[arg(long)]
        ensemble: Option<usize>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Start from the J-point grid on the unit sphere.
        #[arg(long = "ic-grid")]
        ic_grid: Option<usize>,
        /// Roll out this checkpoint instead of the config's runs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the structural, gradient and linear self-checks.
    Verify {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also check a stored network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write verify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize histories and rollouts of every variant.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Structural,
    Gradients,
    Linear,
    All,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Structural => Scope::Structural,
            ScopeArg::Gradients => Scope::Gradients,
            ScopeArg::Linear => Scope::Linear,
            ScopeArg::All => Scope::All,
        }
    }
}

fn load(common: &Common) -> CliResult<(ExperimentConfig, PathBuf, Vec<locsymp_cli::config::Variant>)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = cfg.out_dir(common.out.as_deref());
    let variants = cfg.variants(&out)?;
    Ok((cfg, out, variants))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { common, seed, delta } => {
            let (_, _, variants) = load(&common)?;
            commands::generate(&variants, &GenerateArgs { seed, delta })
        }
        Command::Train {
            common,
            seed,
            ensemble,
            epochs,
            resume,
        } => {
            let (cfg, _, variants) = load(&common)?;
            commands::cmd_train(
                &cfg,
                &variants,
                &TrainArgs {
                    seed,
                    ensemble,
                    epochs,
                    resume,
                },
            )
        }
        Command::Rollout {
            common,
            seed,
            ensemble,
            steps,
            ic_grid,
            checkpoint,
        } => {
            let (_, _, variants) = load(&common)?;
            commands::cmd_rollout(
                &variants,
                &RolloutArgs {
                    seed,
                    ensemble,
                    steps,
                    ic_grid,
                    checkpoint,
                },
            )
        }
        Command::Verify {
            scope,
            seed,
            checkpoint,
            out,
        } => commands::cmd_verify(&VerifyArgs {
            scope: Some(scope.into()),
            seed,
            checkpoint,
            out,
        }),
        Command::Report { common } => {
            let (cfg, out, variants) = load(&common)?;
            commands::cmd_report(&cfg, &variants, Path::new(&out))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
