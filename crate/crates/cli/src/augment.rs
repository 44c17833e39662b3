//! `augment` command: mention replacement, typo injection, and OOV test sets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use spanib_core::augment::{derive_seed, make_oov_testset, replace_mentions, typos_transform, OovCoverage};
use spanib_core::corpus::{build_mention_lexicon, oov_rate_with, write_conll, MentionLexicon, OovStats, Sentence};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_corpus, to_json};
use crate::manifest::{OutputDir, RESOLVED_CONFIG_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    Replace,
    Typos,
    OovTest,
}

pub struct AugmentArgs {
    pub input: PathBuf,
    pub mode: AugmentMode,
    pub seed: Option<u64>,
    /// Corpus supplying replacement entries (replace mode); defaults to the input.
    pub lexicon: Option<PathBuf>,
    /// Training corpus whose surfaces the OOV test set must avoid.
    pub train: Option<PathBuf>,
    /// Corpus supplying the held-out entities.
    pub holdout: Option<PathBuf>,
    pub drop_overlap: bool,
    pub out: PathBuf,
}

pub const AUGMENTED_FILE: &str = "augmented.conll";
pub const ALIGNMENT_FILE: &str = "alignment.jsonl";
pub const AUGMENT_REPORT_FILE: &str = "augment_report.json";
pub const TYPOS_FILE: &str = "typos.conll";
pub const OOV_TEST_FILE: &str = "oov_test.conll";
pub const COVERAGE_FILE: &str = "coverage.json";

/// One line of the alignment sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub orig_idx: usize,
    pub variant_idx: usize,
    pub mention_alignments: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplaceReport {
    pub sentences: usize,
    pub replaced_mentions: usize,
    /// Mentions copied unchanged because the lexicon had no entry of their type.
    pub empty_types: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: OovCoverage,
    pub dropped_overlapping_entries: usize,
    pub oov_vs_train: OovStats,
    pub oov_vs_train_by_type: BTreeMap<String, OovStats>,
}

#[derive(Debug)]
pub enum AugmentOutcome {
    Replace(ReplaceReport),
    Typos { sentences: usize },
    OovTest(CoverageReport),
}

/// Replaces mentions in every sentence. Types absent from `lexicon` are
/// left as they are and counted.
pub fn replace_corpus(
    sentences: &[Sentence],
    lexicon: &MentionLexicon,
    seed: u64,
) -> CliResult<(Vec<Sentence>, Vec<AlignmentRecord>, ReplaceReport)> {
    let mut report = ReplaceReport {
        sentences: sentences.len(),
        ..ReplaceReport::default()
    };
    let mut variants = Vec::with_capacity(sentences.len());
    let mut records = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let missing: BTreeSet<&str> = sentence
            .mentions
            .iter()
            .map(|m| m.etype.as_str())
            .filter(|t| lexicon.entries(t).is_none_or(|set| set.is_empty()))
            .collect();
        let pair = if missing.is_empty() {
            replace_mentions(sentence, lexicon, derive_seed(seed, i as u64))?
        } else {
            // a singleton entry makes the original the only choice
            let mut patched = lexicon.clone();
            for m in &sentence.mentions {
                if missing.contains(m.etype.as_str()) {
                    patched.insert(&m.etype, sentence.span_tokens(m.start, m.end).to_vec());
                    *report.empty_types.entry(m.etype.clone()).or_default() += 1;
                }
            }
            replace_mentions(sentence, &patched, derive_seed(seed, i as u64))?
        };
        report.replaced_mentions += sentence
            .mentions
            .iter()
            .filter(|m| !missing.contains(m.etype.as_str()))
            .count();
        records.push(AlignmentRecord {
            orig_idx: i,
            variant_idx: i,
            mention_alignments: pair.span_alignment.clone(),
        });
        variants.push(pair.variant);
    }
    Ok((variants, records, report))
}

fn oov_by_type(train: &[Sentence], test: &[Sentence], cfg: &RunConfig) -> BTreeMap<String, OovStats> {
    let types: BTreeSet<&str> = test.iter().flat_map(|s| s.mentions.iter().map(|m| m.etype.as_str())).collect();
    types
        .into_iter()
        .map(|t| {
            let only: Vec<Sentence> = test
                .iter()
                .map(|s| {
                    let kept = s.mentions.iter().filter(|m| m.etype == t).cloned().collect();
                    Sentence::new(s.tokens.clone(), kept).expect("subset of valid mentions")
                })
                .collect();
            (t.to_string(), oov_rate_with(train, &only, cfg.surface_match))
        })
        .collect()
}

pub fn cmd_augment(cfg: RunConfig, args: &AugmentArgs) -> CliResult<AugmentOutcome> {
    let input = load_corpus(&args.input, cfg.scheme)?;
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let mut out = OutputDir::create(&args.out, "augment")?;
    let mut resolved = serde_json::to_value(&cfg).expect("config serializes");
    resolved["invocation"] = json!({
        "input": args.input,
        "mode": args.mode,
        "seed": seed,
        "lexicon": args.lexicon,
        "train": args.train,
        "holdout": args.holdout,
        "drop_overlap": args.drop_overlap,
    });
    out.write(RESOLVED_CONFIG_FILE, to_json(&resolved))?;

    let outcome = match args.mode {
        AugmentMode::Replace => {
            let lexicon = match &args.lexicon {
                Some(p) => build_mention_lexicon(&load_corpus(p, cfg.scheme)?),
                None => build_mention_lexicon(&input),
            };
            let (variants, records, report) = replace_corpus(&input, &lexicon, seed)?;
            out.write(AUGMENTED_FILE, write_conll(&variants, cfg.scheme, " "))?;
            let lines: String = records
                .iter()
                .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
                .collect();
            out.write(ALIGNMENT_FILE, lines)?;
            out.write(AUGMENT_REPORT_FILE, to_json(&report))?;
            let total: usize = input.iter().map(|s| s.mentions.len()).sum();
            if total > 0 && report.replaced_mentions == 0 {
                out.finish()?;
                let types: Vec<&str> = report.empty_types.keys().map(String::as_str).collect();
                return Err(CliError::runtime(format!(
                    "no mention could be replaced; lexicon has no entries for {}",
                    types.join(", ")
                )));
            }
            AugmentOutcome::Replace(report)
        }
        AugmentMode::Typos => {
            let perturbed: Vec<Sentence> = input
                .iter()
                .enumerate()
                .map(|(i, s)| typos_transform(s, derive_seed(seed, i as u64)))
                .collect();
            out.write(TYPOS_FILE, write_conll(&perturbed, cfg.scheme, " "))?;
            AugmentOutcome::Typos {
                sentences: perturbed.len(),
            }
        }
        AugmentMode::OovTest => {
            let train_path = args
                .train
                .as_ref()
                .ok_or_else(|| CliError::usage("oov-test mode needs --train"))?;
            let holdout_path = args
                .holdout
                .as_ref()
                .ok_or_else(|| CliError::usage("oov-test mode needs --holdout"))?;
            let train = load_corpus(train_path, cfg.scheme)?;
            let lexicon = build_mention_lexicon(&train);
            let mut holdout = build_mention_lexicon(&load_corpus(holdout_path, cfg.scheme)?);
            let mut dropped = 0;
            if args.drop_overlap {
                let kept = holdout.without_surfaces_of(&lexicon);
                dropped = holdout.len() - kept.len();
                if dropped > 0 {
                    log::warn!("dropped {dropped} holdout entries that also occur in training");
                }
                holdout = kept;
            }
            let result = make_oov_testset(&input, &lexicon, &holdout, seed)?;
            out.write(OOV_TEST_FILE, write_conll(&result.sentences, cfg.scheme, " "))?;
            let report = CoverageReport {
                oov_vs_train: oov_rate_with(&train, &result.sentences, cfg.surface_match),
                oov_vs_train_by_type: oov_by_type(&train, &result.sentences, &cfg),
                coverage: result.coverage,
                dropped_overlapping_entries: dropped,
            };
            out.write(COVERAGE_FILE, to_json(&report))?;
            if report.coverage.replaced == 0 && report.coverage.unchanged() > 0 {
                out.finish()?;
                return Err(CliError::runtime("holdout lexicon covers none of the test entity types"));
            }
            AugmentOutcome::OovTest(report)
        }
    };
    out.finish()?;
    Ok(outcome)
}
