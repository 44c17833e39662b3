//! `analyze` command: dataset size and OOV statistics per train/test pair.

use std::path::PathBuf;

use serde_json::json;
use spanib_core::corpus::{format_rate, oov_rate_with, oov_stats_csv, OovStats};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_corpus, to_json};
use crate::manifest::{OutputDir, RESOLVED_CONFIG_FILE};

pub const STATS_FILE: &str = "dataset_stats.csv";
pub const STATS_DETAIL_FILE: &str = "dataset_stats_detail.csv";
pub const DETAIL_HEADER: &str =
    "dataset,sents,entities,oov_entities,oov_rate,unique_entities,unique_oov_entities,type_level_oov_rate";

pub struct AnalyzeArgs {
    pub train: PathBuf,
    pub tests: Vec<PathBuf>,
    /// Dataset names, one per test file; file stems otherwise.
    pub names: Vec<String>,
    /// Report the distinct-surface rate in the main table.
    pub type_level: bool,
    pub out: PathBuf,
}

pub fn detail_csv(rows: &[(String, OovStats)]) -> String {
    let mut out = format!("{DETAIL_HEADER}\n");
    for (name, s) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            s.sents,
            s.entities,
            s.oov_entities,
            format_rate(s.oov_rate),
            s.unique_entities,
            s.unique_oov_entities,
            format_rate(s.type_level_oov_rate)
        ));
    }
    out
}

pub fn cmd_analyze(cfg: RunConfig, args: &AnalyzeArgs) -> CliResult<Vec<(String, OovStats)>> {
    if args.tests.is_empty() {
        return Err(CliError::usage("analyze needs at least one --test corpus"));
    }
    if !args.names.is_empty() && args.names.len() != args.tests.len() {
        return Err(CliError::usage("give one --name per --test or none at all"));
    }
    let train = load_corpus(&args.train, cfg.scheme)?;
    let mut rows = Vec::new();
    for (i, path) in args.tests.iter().enumerate() {
        let name = match args.names.get(i) {
            Some(n) => n.clone(),
            None => path
                .file_stem()
                .map_or_else(|| format!("dataset{i}"), |s| s.to_string_lossy().into_owned()),
        };
        let test = load_corpus(path, cfg.scheme)?;
        rows.push((name, oov_rate_with(&train, &test, cfg.surface_match)));
    }

    let mut out = OutputDir::create(&args.out, "analyze")?;
    let mut resolved = serde_json::to_value(&cfg).expect("config serializes");
    resolved["invocation"] = json!({
        "train": args.train,
        "tests": args.tests,
        "names": args.names,
        "type_level": args.type_level,
    });
    out.write(RESOLVED_CONFIG_FILE, to_json(&resolved))?;
    out.write(STATS_FILE, oov_stats_csv(&rows, args.type_level))?;
    out.write(STATS_DETAIL_FILE, detail_csv(&rows))?;
    out.finish()?;
    Ok(rows)
}
