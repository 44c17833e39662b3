//! Command-line front end for training and evaluating span-level
//! information-bottleneck NER models.

pub mod analyze;
pub mod augment;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod sweep;
pub mod synth;
pub mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "spanib", version, about = "Span-based NER with an information bottleneck")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `train.weights.gamma=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and keep the best checkpoints by dev F1.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a test corpus.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Training corpus for the in/out-of-dictionary split.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a transformed copy of a corpus.
    Augment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: augment::AugmentMode,
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus whose mentions are the replacement pool (replace mode).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Training corpus (oov-test mode).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Corpus supplying unseen entities (oov-test mode).
        #[arg(long)]
        holdout: Option<PathBuf>,
        /// Discard holdout entries that also occur in training.
        #[arg(long)]
        drop_overlap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics and OOV rates.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long = "test", required = true)]
        tests: Vec<PathBuf>,
        #[arg(long = "name")]
        names: Vec<String>,
        /// Use the distinct-surface OOV rate in the main table.
        #[arg(long)]
        type_level: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over a grid of gamma or beta values and several seeds.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        param: Option<config::SweepParam>,
        /// Comma-separated coefficients; 0 is always added.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Value of the coefficient not being swept.
        #[arg(long)]
        fixed: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run children on a thread pool.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic templated corpus.
    Synth {
        /// Override a generator setting, e.g. `train_sentences=200`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "bio2")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, data, out } => {
            train::cmd_train(config.resolve()?, &data.train, &data.dev, &data.test, out)?;
        }
        Command::Eval {
            config,
            checkpoint,
            test,
            train,
            out,
        } => {
            let args = train::EvalArgs {
                checkpoint,
                test,
                train,
                check_config: config.config.is_some() || !config.set.is_empty(),
                out,
            };
            train::cmd_eval(config.resolve()?, &args)?;
        }
        Command::Augment {
            config,
            input,
            mode,
            seed,
            lexicon,
            train,
            holdout,
            drop_overlap,
            out,
        } => {
            let args = augment::AugmentArgs {
                input,
                mode,
                seed,
                lexicon,
                train,
                holdout,
                drop_overlap,
                out,
            };
            augment::cmd_augment(config.resolve()?, &args)?;
        }
        Command::Analyze {
            config,
            train,
            tests,
            names,
            type_level,
            out,
        } => {
            let args = analyze::AnalyzeArgs {
                train,
                tests,
                names,
                type_level,
                out,
            };
            analyze::cmd_analyze(config.resolve()?, &args)?;
        }
        Command::Sweep {
            config,
            data,
            param,
            grid,
            fixed,
            seeds,
            parallel,
            out,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(p) = param {
                cfg.sweep.param = p;
            }
            if let Some(g) = grid {
                cfg.sweep.grid = g;
            }
            if fixed.is_some() {
                cfg.sweep.fixed = fixed;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            cfg.sweep.parallel |= parallel;
            let outcome = sweep::cmd_sweep(cfg, &data.train, &data.dev, &data.test, out)?;
            if outcome.trend.rise_then_decline {
                log::info!("mean F1 peaks at {:?}", outcome.trend.best_coefficient);
            }
        }
        Command::Synth {
            set,
            seed,
            scheme,
            out,
        } => {
            let mut cfg = synth::resolve_synthetic(&set)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scheme = scheme.parse().map_err(CliError::from)?;
            synth::cmd_synth(cfg, scheme, out)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Usage.code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.code()
        }
    }
}
