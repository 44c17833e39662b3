//! `sweep` command: one training run per (coefficient, seed), scored by the
//! mean test F1 of the retained checkpoints.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spanib_core::corpus::MentionDictionary;
use spanib_core::training::{evaluate_checkpoints, fit, log_csv};
use spanib_core::{Error, TrainMode};

use crate::config::{RunConfig, SweepParam};
use crate::error::{CliError, CliResult};
use crate::io::to_json;
use crate::manifest::{OutputDir, RESOLVED_CONFIG_FILE};
use crate::train::{apply_paths, Corpora};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const TREND_FILE: &str = "sweep_trend.json";
pub const SWEEP_HEADER: &str = "coefficient,seed,test_f1,is_baseline,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub coefficient: f64,
    pub seed: u64,
    pub test_f1: Option<f64>,
    pub is_baseline: bool,
    /// `ok`, or the failure message.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMean {
    pub coefficient: f64,
    pub mean_f1: Option<f64>,
    pub runs: usize,
}

/// Observed shape of the mean-F1 curve; nothing here is asserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub param: SweepParam,
    pub fixed_other: f64,
    pub means: Vec<CoefficientMean>,
    pub baseline_mean_f1: Option<f64>,
    pub best_coefficient: Option<f64>,
    pub best_minus_baseline: Option<f64>,
    /// The maximum lies strictly inside the coefficient range.
    pub rise_then_decline: bool,
    pub failures: usize,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub trend: TrendReport,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.trend.failures
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let f1 = r.test_f1.map_or_else(String::new, |f| format!("{f:.4}"));
        let status = r.status.replace([',', '\n'], ";");
        out.push_str(&format!("{},{},{},{},{}\n", r.coefficient, r.seed, f1, r.is_baseline, status));
    }
    out
}

/// Grid with the zero baseline added, sorted and deduplicated.
pub fn full_grid(grid: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = grid.iter().copied().chain(std::iter::once(0.0)).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

pub fn trend(param: SweepParam, fixed_other: f64, rows: &[SweepRow]) -> TrendReport {
    let mut by_coef: BTreeMap<u64, (f64, Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let slot = by_coef.entry(r.coefficient.to_bits()).or_insert((r.coefficient, Vec::new(), 0));
        slot.2 += 1;
        if let Some(f) = r.test_f1 {
            slot.1.push(f);
        }
    }
    let mut means: Vec<CoefficientMean> = by_coef
        .into_values()
        .map(|(coefficient, scores, runs)| CoefficientMean {
            coefficient,
            mean_f1: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
            runs,
        })
        .collect();
    means.sort_by(|a, b| a.coefficient.total_cmp(&b.coefficient));
    let baseline_mean_f1 = means.iter().find(|m| m.coefficient == 0.0).and_then(|m| m.mean_f1);
    let scored: Vec<(usize, f64)> = means
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.mean_f1.map(|f| (i, f)))
        .collect();
    let best = scored.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1));
    let rise_then_decline = match (best, scored.first(), scored.last()) {
        (Some((i, f)), Some(&(_, first)), Some(&(_, last))) => {
            i != scored[0].0 && i != scored[scored.len() - 1].0 && f > first && f > last
        }
        _ => false,
    };
    TrendReport {
        param,
        fixed_other,
        best_coefficient: best.map(|(i, _)| means[i].coefficient),
        best_minus_baseline: best.zip(baseline_mean_f1).map(|((_, f), b)| f - b),
        means,
        baseline_mean_f1,
        rise_then_decline,
        failures: rows.iter().filter(|r| r.test_f1.is_none()).count(),
    }
}

/// Trains one child run; its log goes under `runs/`.
fn child_run(base: &RunConfig, corpora: &Corpora, coefficient: f64, seed: u64) -> Result<(f64, String), Error> {
    let mut cfg = base.train.clone();
    cfg.seed = seed;
    let fixed = base.sweep.fixed;
    match base.sweep.param {
        SweepParam::Gamma => {
            cfg.weights.gamma = coefficient;
            if let Some(b) = fixed {
                cfg.weights.beta = b;
            }
        }
        SweepParam::Beta => {
            cfg.weights.beta = coefficient;
            if let Some(g) = fixed {
                cfg.weights.gamma = g;
            }
        }
    }
    cfg.weights.validate()?;
    let test = corpora.test.as_ref().expect("sweep requires a test corpus");
    let outcome = fit(&corpora.train, &corpora.dev, &base.model, &cfg)?;
    let dict = MentionDictionary::from_corpus(&corpora.train, base.surface_match);
    let report = evaluate_checkpoints(&outcome.checkpoints, test, Some(&dict))?;
    Ok((report.mean_f1, log_csv(&outcome.log)))
}

/// Runs the whole grid. Child failures are recorded in the rows, not returned.
pub fn run_sweep(cfg: &RunConfig, corpora: &Corpora, out: &mut OutputDir) -> CliResult<SweepOutcome> {
    if cfg.sweep.grid.is_empty() {
        return Err(CliError::usage("sweep grid is empty"));
    }
    if cfg.sweep.seeds.is_empty() {
        return Err(CliError::usage("sweep needs at least one seed"));
    }
    if corpora.test.is_none() {
        return Err(CliError::usage("sweep needs a test corpus"));
    }
    if cfg.train.mode != TrainMode::Miner {
        log::warn!("sweeping {} under mode {}", cfg.sweep.param.as_str(), cfg.train.mode);
    }
    out.write(RESOLVED_CONFIG_FILE, cfg.to_json())?;

    let jobs: Vec<(f64, u64)> = full_grid(&cfg.sweep.grid)
        .into_iter()
        .flat_map(|c| cfg.sweep.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let run = |&(c, s): &(f64, u64)| (c, s, child_run(cfg, corpora, c, s));
    let results: Vec<_> = if cfg.sweep.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };

    let param = cfg.sweep.param.as_str();
    let mut rows = Vec::with_capacity(results.len());
    for (coefficient, seed, result) in results {
        let (test_f1, status) = match result {
            Ok((f1, log)) => {
                out.write(&format!("runs/{param}={coefficient}_seed={seed}/train_log.csv"), log)?;
                (Some(f1), "ok".to_string())
            }
            Err(e) => {
                log::error!("{param}={coefficient} seed={seed} failed: {e}");
                (None, format!("failed: {e}"))
            }
        };
        rows.push(SweepRow {
            coefficient,
            seed,
            test_f1,
            is_baseline: coefficient == 0.0,
            status,
        });
    }
    rows.sort_by(|a, b| a.coefficient.total_cmp(&b.coefficient).then(a.seed.cmp(&b.seed)));

    let fixed_other = cfg.sweep.fixed.unwrap_or(match cfg.sweep.param {
        SweepParam::Gamma => cfg.train.weights.beta,
        SweepParam::Beta => cfg.train.weights.gamma,
    });
    let trend = trend(cfg.sweep.param, fixed_other, &rows);
    out.write(SWEEP_FILE, sweep_csv(&rows))?;
    out.write(TREND_FILE, to_json(&trend))?;
    Ok(SweepOutcome { rows, trend })
}

pub fn cmd_sweep(
    mut cfg: RunConfig,
    train: &Option<PathBuf>,
    dev: &Option<PathBuf>,
    test: &Option<PathBuf>,
    out: PathBuf,
) -> CliResult<SweepOutcome> {
    apply_paths(&mut cfg, train, dev, test);
    let corpora = Corpora::load(&cfg)?;
    let mut dir = OutputDir::create(out, "sweep")?;
    let outcome = run_sweep(&cfg, &corpora, &mut dir)?;
    dir.finish()?;
    if outcome.failures() > 0 {
        return Err(CliError::runtime(format!(
            "{} of {} sweep runs failed",
            outcome.failures(),
            outcome.rows.len()
        )));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: f64, seed: u64, f1: Option<f64>) -> SweepRow {
        SweepRow {
            coefficient: c,
            seed,
            test_f1: f1,
            is_baseline: c == 0.0,
            status: if f1.is_some() { "ok".into() } else { "failed: x".into() },
        }
    }

    #[test]
    fn grid_gains_baseline() {
        assert_eq!(full_grid(&[1e-3, 1e-5]), vec![0.0, 1e-5, 1e-3]);
        assert_eq!(full_grid(&[0.0]), vec![0.0]);
    }

    #[test]
    fn trend_detects_interior_peak() {
        let rows = vec![
            row(0.0, 0, Some(0.5)),
            row(0.0, 1, Some(0.6)),
            row(1e-4, 0, Some(0.7)),
            row(1e-2, 0, Some(0.4)),
            row(1e-2, 1, None),
        ];
        let t = trend(SweepParam::Gamma, 1e-3, &rows);
        assert!(t.rise_then_decline);
        assert_eq!(t.best_coefficient, Some(1e-4));
        assert!((t.baseline_mean_f1.unwrap() - 0.55).abs() < 1e-12);
        assert!((t.best_minus_baseline.unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(t.failures, 1);
        let monotone = vec![row(0.0, 0, Some(0.1)), row(1.0, 0, Some(0.2)), row(2.0, 0, Some(0.3))];
        assert!(!trend(SweepParam::Beta, 0.0, &monotone).rise_then_decline);
    }

    #[test]
    fn csv_leaves_failed_scores_empty() {
        let csv = sweep_csv(&[row(0.0, 0, Some(0.25)), row(1e-5, 2, None)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines[1], "0,0,0.2500,true,ok");
        assert_eq!(lines[2], "0.00001,2,,false,failed: x");
    }
}
