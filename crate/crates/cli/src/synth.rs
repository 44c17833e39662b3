//! `synth` command: writes a templated synthetic corpus with disjoint
//! train/dev/test entity pools.

use std::path::PathBuf;

use serde_json::Value;
use spanib_core::corpus::{write_conll, TagScheme};
use spanib_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus};

use crate::config::apply_override;
use crate::error::{CliError, CliResult};
use crate::io::to_json;
use crate::manifest::{OutputDir, RESOLVED_CONFIG_FILE};

pub const SPLIT_FILES: [&str; 4] = ["train.conll", "dev.conll", "test.conll", "test_indict.conll"];

/// Defaults with `key=value` overrides applied.
pub fn resolve_synthetic(overrides: &[String]) -> CliResult<SyntheticConfig> {
    let mut value: Value = serde_json::to_value(SyntheticConfig::default()).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: SyntheticConfig =
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("invalid synthetic config: {e}")))?;
    if cfg.train_entities_per_type == 0 || cfg.dev_entities_per_type == 0 || cfg.test_entities_per_type == 0 {
        return Err(CliError::usage("entity pools must be non-empty"));
    }
    if cfg.max_entity_tokens == 0 {
        return Err(CliError::usage("max_entity_tokens must be positive"));
    }
    Ok(cfg)
}

pub fn write_corpus(corpus: &SyntheticCorpus, scheme: TagScheme, out: &mut OutputDir) -> CliResult<()> {
    let splits = [&corpus.train, &corpus.dev, &corpus.test, &corpus.test_indict];
    for (file, split) in SPLIT_FILES.iter().zip(splits) {
        out.write(file, write_conll(split, scheme, " "))?;
    }
    Ok(())
}

pub fn cmd_synth(cfg: SyntheticConfig, scheme: TagScheme, out: PathBuf) -> CliResult<SyntheticCorpus> {
    let corpus = generate(&cfg);
    let mut dir = OutputDir::create(out, "synth")?;
    dir.write(RESOLVED_CONFIG_FILE, to_json(&serde_json::json!({ "synthetic": cfg, "scheme": scheme })))?;
    write_corpus(&corpus, scheme, &mut dir)?;
    dir.finish()?;
    Ok(corpus)
}
