//! Ablation grids and epoch-binned learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Switch, TrainConfig};
use crate::corpus::QuadType;
use crate::encoder::ImplicitTokenMode;
use crate::error::{Error, Result};
use crate::heads::AttentionMode;
use crate::metrics::{aggregate_trials, Evaluation, Score, Summary};
use crate::negatives::NegativesMode;
use crate::trainer::{train, Splits, TrialResult};

pub const SUITES: [&str; 4] = ["negatives", "implicit", "attention", "multitask"];

/// Config variants of a suite, each with a short label.
pub fn suite_variants(suite: &str, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    let with = |label: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (label.to_owned(), c)
    };
    Ok(match suite {
        "negatives" => vec![
            with("adaptive", &|c| c.negatives_mode = NegativesMode::Adaptive),
            with("random", &|c| c.negatives_mode = NegativesMode::Random),
            with("none", &|c| c.negatives_mode = NegativesMode::None),
        ],
        "implicit" => vec![
            with("dedicated", &|c| c.implicit_token_mode = ImplicitTokenMode::Dedicated),
            with("cls", &|c| c.implicit_token_mode = ImplicitTokenMode::Cls),
        ],
        "attention" => vec![
            with("multihead", &|c| c.attention_mode = AttentionMode::Multihead),
            with("mean", &|c| c.attention_mode = AttentionMode::Mean),
        ],
        "multitask" => vec![
            with("on", &|c| c.multitask = Switch::On),
            with("off", &|c| c.multitask = Switch::Off),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown ablation suite {other:?}; expected one of {}",
                SUITES.join(", ")
            )))
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub selected_epoch: usize,
    pub test: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub trials: Vec<TrialSummary>,
    pub mean: Summary,
    pub std: Summary,
    /// Mean test F1 per quadruple type.
    pub by_type_f1: BTreeMap<QuadType, f64>,
}

/// One bin of a learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub suite: String,
    pub rows: Vec<AblationRow>,
    /// Test F1 per variant, in five equal epoch bins.
    pub curves: BTreeMap<String, Vec<Bin>>,
}

/// Splits epochs `1..=max_epoch` into `bins` equal ranges and reports mean
/// and population std of the values that fall into each. Empty bins are
/// omitted.
pub fn epoch_bins(points: &[(usize, f64)], max_epoch: usize, bins: usize) -> Vec<Bin> {
    let bins = bins.max(1);
    (0..bins)
        .filter_map(|b| {
            let first = b * max_epoch / bins + 1;
            let last = (b + 1) * max_epoch / bins;
            let values: Vec<f64> = points
                .iter()
                .filter(|(e, _)| (first..=last).contains(e))
                .map(|&(_, v)| v)
                .collect();
            if values.is_empty() {
                return None;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            Some(Bin {
                first_epoch: first,
                last_epoch: last,
                mean,
                std: var.sqrt(),
                count: values.len(),
            })
        })
        .collect()
}

fn summarise(variant: String, results: &[TrialResult]) -> Result<AblationRow> {
    let trials: Vec<TrialSummary> = results
        .iter()
        .map(|r| TrialSummary {
            seed: r.seed,
            selected_epoch: r.selected_epoch,
            test: r.selected_test().cloned(),
        })
        .collect();
    let scores: Vec<Score> = trials.iter().filter_map(|t| t.test.as_ref().map(|e| e.overall)).collect();
    let (mean, std) = if scores.is_empty() {
        (Summary::default(), Summary::default())
    } else {
        aggregate_trials(&scores)?
    };
    let by_type_f1 = QuadType::ALL
        .iter()
        .map(|&t| {
            let f1s: Vec<f64> = trials
                .iter()
                .filter_map(|tr| tr.test.as_ref().map(|e| e.by_type[&t].f1))
                .collect();
            let mean = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
            (t, mean)
        })
        .collect();
    Ok(AblationRow {
        variant,
        trials,
        mean,
        std,
        by_type_f1,
    })
}

/// Trains every variant of `suite` once per seed in `base.seeds`.
///
/// With `base.output_dir` set, each trial logs under
/// `<output_dir>/<variant>/seed-<seed>` and the summary is written to
/// `ablation.json` and `table.txt`.
pub fn run_ablation(suite: &str, base: &TrainConfig, splits: &Splits) -> Result<Ablation> {
    let variants = suite_variants(suite, base)?;
    let mut rows = Vec::new();
    let mut curves = BTreeMap::new();
    for (label, cfg) in variants {
        let mut results = Vec::new();
        for &seed in &base.seeds {
            let mut trial_cfg = cfg.clone();
            if let Some(dir) = &base.output_dir {
                trial_cfg.output_dir = Some(dir.join(&label).join(format!("seed-{seed}")));
                trial_cfg.checkpoint_dir = None;
            }
            log::info!("{suite}/{label} seed {seed}");
            results.push(train(splits, &trial_cfg, seed)?.result);
        }
        let points: Vec<(usize, f64)> = results
            .iter()
            .flat_map(|r| r.evals.iter().filter_map(|e| e.test.as_ref().map(|t| (e.epoch, t.overall.f1))))
            .collect();
        curves.insert(label.clone(), epoch_bins(&points, cfg.epochs, 5));
        rows.push(summarise(label, &results)?);
    }
    let ablation = Ablation {
        suite: suite.to_owned(),
        rows,
        curves,
    };
    if let Some(dir) = &base.output_dir {
        write_file(&dir.join("ablation.json"), &serde_json::to_string_pretty(&ablation)?)?;
        write_file(&dir.join("table.txt"), &format_table(&ablation))?;
    }
    Ok(ablation)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Plain-text comparison table, one row per variant.
pub fn format_table(ablation: &Ablation) -> String {
    let mut out = format!("{:<10} {:>6} {:>15} {:>8} {:>8}", "variant", "trials", "F1 (mean±std)", "P", "R");
    for t in QuadType::ALL {
        let _ = write!(out, " {:>8}", t.as_str());
    }
    out.push('\n');
    for row in &ablation.rows {
        let _ = write!(
            out,
            "{:<10} {:>6} {:>8.4}±{:<6.4} {:>8.4} {:>8.4}",
            row.variant,
            row.trials.len(),
            row.mean.f1,
            row.std.f1,
            row.mean.precision,
            row.mean.recall
        );
        for t in QuadType::ALL {
            let _ = write!(out, " {:>8.4}", row.by_type_f1[&t]);
        }
        out.push('\n');
    }
    out
}

/// One line of a `metrics.jsonl` training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn read_metric_log(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Load {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Bins the F1 of `split` from several logs of the same schedule.
pub fn curve_from_logs(logs: &[Vec<MetricRecord>], split: &str, bins: usize) -> Vec<Bin> {
    let points: Vec<(usize, f64)> = logs
        .iter()
        .flatten()
        .filter(|r| r.split == split)
        .map(|r| (r.epoch, r.f1))
        .collect();
    let max_epoch = points.iter().map(|p| p.0).max().unwrap_or(0);
    epoch_bins(&points, max_epoch, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let base = TrainConfig::default();
        assert_eq!(suite_variants("negatives", &base).unwrap().len(), 3);
        for s in ["implicit", "attention", "multitask"] {
            assert_eq!(suite_variants(s, &base).unwrap().len(), 2);
        }
        assert!(suite_variants("dropout", &base).is_err());
        let attention = suite_variants("attention", &base).unwrap();
        assert_eq!(attention[1].1.attention_mode, AttentionMode::Mean);
    }

    #[test]
    fn five_equal_bins() {
        let points: Vec<(usize, f64)> = (1..=500).filter(|e| e % 10 == 0).map(|e| (e, e as f64)).collect();
        let bins = epoch_bins(&points, 500, 5);
        assert_eq!(bins.len(), 5);
        assert_eq!((bins[0].first_epoch, bins[0].last_epoch), (1, 100));
        assert_eq!((bins[4].first_epoch, bins[4].last_epoch), (401, 500));
        assert!(bins.iter().all(|b| b.count == 10));
        // 10, 20, ..., 100
        assert!((bins[0].mean - 55.0).abs() < 1e-12);
        assert!((bins[0].std - 8.25f64.sqrt() * 10.0).abs() < 1e-9);
    }
}
