//! `train` and `eval` commands.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use spanib_core::checkpoint;
use spanib_core::corpus::{write_conll, MentionDictionary, Sentence};
use spanib_core::decode_eval::{evaluate, predict};
use spanib_core::training::{evaluate_checkpoints, fit, log_csv, FitOutcome, LossRecord, TopKReport};
use spanib_core::EvalReport;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_corpus, load_nonempty, pick_path, to_json};
use crate::manifest::{OutputDir, RESOLVED_CONFIG_FILE};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_INDEX_FILE: &str = "checkpoints.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub rank: usize,
    pub epoch: usize,
    pub dev_f1: f64,
    pub file: String,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub log: Vec<LossRecord>,
    pub checkpoints: Vec<CheckpointEntry>,
    pub test: Option<TopKReport>,
}

/// Corpora named by a resolved config.
pub struct Corpora {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Option<Vec<Sentence>>,
}

impl Corpora {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let train_path = pick_path(&None, &cfg.data.train, "train")?;
        let dev_path = pick_path(&None, &cfg.data.dev, "dev")?;
        Ok(Self {
            train: load_nonempty(&train_path, cfg.scheme, "train")?,
            dev: load_nonempty(&dev_path, cfg.scheme, "dev")?,
            test: match &cfg.data.test {
                Some(p) => Some(load_nonempty(p, cfg.scheme, "test")?),
                None => None,
            },
        })
    }
}

/// Fills data paths given on the command line into the config.
pub fn apply_paths(cfg: &mut RunConfig, train: &Option<PathBuf>, dev: &Option<PathBuf>, test: &Option<PathBuf>) {
    for (flag, slot) in [(train, &mut cfg.data.train), (dev, &mut cfg.data.dev), (test, &mut cfg.data.test)] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
}

/// Trains on `corpora` and writes the log, checkpoints and optional test report.
pub fn run_train(cfg: &RunConfig, corpora: &Corpora, out: &mut OutputDir) -> CliResult<TrainSummary> {
    out.write(RESOLVED_CONFIG_FILE, cfg.to_json())?;
    let outcome: FitOutcome = fit(&corpora.train, &corpora.dev, &cfg.model, &cfg.train)?;
    out.write(TRAIN_LOG_FILE, log_csv(&outcome.log))?;

    let mut entries = Vec::new();
    for (rank, snap) in outcome.checkpoints.iter().enumerate() {
        let file = format!("checkpoints/rank{}_epoch{}.ckpt", rank + 1, snap.epoch);
        let extra = json!({ "epoch": snap.epoch, "dev_f1": snap.dev_f1, "rank": rank + 1 });
        let bytes = checkpoint::to_bytes(&snap.model, extra)?;
        out.write(&file, bytes)?;
        entries.push(CheckpointEntry {
            rank: rank + 1,
            epoch: snap.epoch,
            dev_f1: snap.dev_f1,
            file,
        });
    }
    out.write(CHECKPOINT_INDEX_FILE, to_json(&entries))?;

    let test = match &corpora.test {
        Some(test) => {
            let dict = MentionDictionary::from_corpus(&corpora.train, cfg.surface_match);
            let report = evaluate_checkpoints(&outcome.checkpoints, test, Some(&dict))?;
            out.write(TEST_REPORT_FILE, to_json(&report))?;
            log::info!("mean test F1 over {} checkpoints: {:.4}", entries.len(), report.mean_f1);
            Some(report)
        }
        None => None,
    };
    Ok(TrainSummary {
        log: outcome.log,
        checkpoints: entries,
        test,
    })
}

pub fn cmd_train(
    mut cfg: RunConfig,
    train: &Option<PathBuf>,
    dev: &Option<PathBuf>,
    test: &Option<PathBuf>,
    out: PathBuf,
) -> CliResult<TrainSummary> {
    apply_paths(&mut cfg, train, dev, test);
    let corpora = Corpora::load(&cfg)?;
    let mut dir = OutputDir::create(out, "train")?;
    let summary = run_train(&cfg, &corpora, &mut dir)?;
    dir.finish()?;
    Ok(summary)
}

pub const EVAL_OVERALL_FILE: &str = "eval_overall.csv";
pub const EVAL_PARTITION_FILE: &str = "eval_partition.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.conll";

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
    /// Training corpus defining the mention dictionary.
    pub train: Option<PathBuf>,
    /// Verify the stored model configuration against `cfg.model`.
    pub check_config: bool,
    pub out: PathBuf,
}

pub fn cmd_eval(cfg: RunConfig, args: &EvalArgs) -> CliResult<EvalReport> {
    let test = load_corpus(&args.test, cfg.scheme)?;
    if test.is_empty() {
        return Err(CliError::usage(format!("test corpus {} has no sentences", args.test.display())));
    }
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!("checkpoint not found: {}", args.checkpoint.display())));
    }
    let model = if args.check_config {
        checkpoint::load_expecting(&args.checkpoint, &cfg.model)?
    } else {
        checkpoint::load(&args.checkpoint)?.0
    };
    let dict = match &args.train {
        Some(p) => Some(MentionDictionary::from_corpus(&load_corpus(p, cfg.scheme)?, cfg.surface_match)),
        None => None,
    };

    let mut out = OutputDir::create(&args.out, "eval")?;
    let mut resolved = serde_json::to_value(&cfg).expect("config serializes");
    resolved["invocation"] = json!({
        "checkpoint": args.checkpoint,
        "test": args.test,
        "train": args.train,
    });
    out.write(RESOLVED_CONFIG_FILE, to_json(&resolved))?;

    let predictions = predict(&model, &test)?;
    let report = evaluate(&predictions, &test, dict.as_ref())?;
    let predicted: Vec<Sentence> = test
        .iter()
        .zip(&predictions)
        .map(|(s, p)| Sentence::new(s.tokens.clone(), p.iter().map(|x| x.to_mention()).collect()))
        .collect::<Result<_, _>>()?;
    out.write(PREDICTIONS_FILE, write_conll(&predicted, cfg.scheme, " "))?;
    out.write(EVAL_OVERALL_FILE, report.overall_csv())?;
    if let Some(csv) = report.partition_csv() {
        out.write(EVAL_PARTITION_FILE, csv)?;
    }
    out.write(EVAL_REPORT_FILE, report.to_json()?)?;
    out.finish()?;
    Ok(report)
}
