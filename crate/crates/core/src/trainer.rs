//! Joint training of tagger, pair classifier and auxiliary heads.
//!
//! Every step runs the current model over a batch, decodes its aspect and
//! opinion candidates, builds negative pairs from them (or from random spans,
//! or none), and minimises the sum of the four losses with AdamW.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Selection, TrainConfig};
use crate::corpus::{load_canonical, remap_categories, Example, LabelVocab};
use crate::error::{Error, Result};
use crate::heads::predict_tags;
use crate::metrics::{evaluate, Evaluation};
use crate::model::Model;
use crate::negatives::{construct_adaptive, construct_none, construct_random, reduce_gold, KPolicy, NegativesMode, PairTarget};
use crate::objective::{
    combine, loss_category, loss_pairs, loss_sentiment, loss_tagging, project_aspects, project_opinions, LossReport,
    LossWeights,
};
use crate::optim::AdamW;
use crate::pipeline::predict_examples;
use crate::tagseq::{decode_tags, encode_tags, resolve_overlaps};
use crate::tensor::{Graph, Var};

/// Train, validation and test examples over one label vocabulary.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: LabelVocab,
}

impl Splits {
    /// Uses the training vocabulary, extended with any category that only
    /// appears in the dev or test split.
    pub fn new(
        (train, train_vocab): (Vec<Example>, LabelVocab),
        dev: Option<(Vec<Example>, LabelVocab)>,
        test: Option<(Vec<Example>, LabelVocab)>,
    ) -> Result<Self> {
        let mut vocab = train_vocab.clone();
        for (_, v) in dev.iter().chain(test.iter()) {
            vocab.extend_with(v.categories().iter().map(String::as_str));
        }
        let train = remap_categories(&train, &train_vocab, &vocab)?;
        let remap = |split: Option<(Vec<Example>, LabelVocab)>| match split {
            Some((ex, v)) => remap_categories(&ex, &v, &vocab),
            None => Ok(Vec::new()),
        };
        let dev = remap(dev)?;
        let test = remap(test)?;
        let overlap = test.iter().filter(|t| train.iter().any(|e| e.tokens == t.tokens)).count();
        if overlap > 0 {
            log::warn!("{overlap} test sentences also occur in the training split");
        }
        Ok(Splits { train, dev, test, vocab })
    }

    /// Loads the canonical files named in `cfg`.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let train_path = cfg
            .train_path
            .as_ref()
            .ok_or_else(|| Error::Config("train_path is required".into()))?;
        let train = load_canonical(train_path)?;
        let dev = cfg.dev_path.as_ref().map(load_canonical).transpose()?;
        let test = cfg.test_path.as_ref().map(load_canonical).transpose()?;
        Self::new(train, dev, test)
    }
}

/// An example with its training targets precomputed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub example: Example,
    pub tags: Vec<usize>,
    pub positives: Vec<PairTarget>,
}

/// Builds gold tags and positive pairs. Overlapping gold spans of one role
/// cannot all be tagged; the earliest (then longest) span is kept for the
/// tag targets while every gold pair still trains the classifier.
pub fn prepare(example: &Example, vocab: &LabelVocab) -> Result<Prepared> {
    let aspects: Vec<_> = example.gold_aspects().into_iter().collect();
    let opinions: Vec<_> = example.gold_opinions().into_iter().collect();
    let (aspects, dropped_a) = resolve_overlaps(&aspects);
    let (opinions, dropped_o) = resolve_overlaps(&opinions);
    if !dropped_a.is_empty() || !dropped_o.is_empty() {
        log::debug!(
            "{:?}: {} overlapping gold spans left untagged",
            example.tokens.join(" "),
            dropped_a.len() + dropped_o.len()
        );
    }
    let tags = encode_tags(example.tokens.len(), &aspects, &opinions)?;
    Ok(Prepared {
        example: example.clone(),
        tags: tags.ids(),
        positives: reduce_gold(&example.gold, vocab),
    })
}

/// The parts of [`TrainConfig`] that shape a single optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub negatives: NegativesMode,
    pub max_candidates_per_role: usize,
    pub k_policy: KPolicy,
    pub multitask: bool,
    pub weights: LossWeights,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for StepOptions {
    fn from(cfg: &TrainConfig) -> Self {
        StepOptions {
            negatives: cfg.negatives_mode,
            max_candidates_per_role: cfg.max_candidates_per_role,
            k_policy: cfg.k_policy(),
            multitask: cfg.multitask.is_on(),
            weights: cfg.loss_weights(),
        }
    }
}

/// Forward pass and losses for one batch.
pub struct BatchObjective<'m> {
    pub graph: Graph<'m>,
    pub loss: Option<Var>,
    pub report: LossReport,
    /// The pairs scored for each example, positives first.
    pub pairs: Vec<Vec<PairTarget>>,
}

pub fn batch_objective<'m>(
    model: &'m Model,
    batch: &[&Prepared],
    opts: &StepOptions,
    rng: &mut impl Rng,
) -> Result<BatchObjective<'m>> {
    let mut g = Graph::new(&model.store);
    let width = model.vocab.num_combinations();
    let mut tag_probs = Vec::with_capacity(batch.len());
    let mut gold_tags = Vec::new();
    let mut pair_probs = Vec::new();
    let mut pair_targets = Vec::new();
    let mut cat_probs = Vec::new();
    let mut cat_units = Vec::new();
    let mut sent_probs = Vec::new();
    let mut sent_units = Vec::new();
    let mut all_pairs = Vec::with_capacity(batch.len());
    let (mut positives, mut negatives) = (0, 0);

    for item in batch {
        let ex = &item.example;
        let (h, p) = model.forward_tokens(&mut g, &ex.tokens)?;
        tag_probs.push(p);
        gold_tags.extend_from_slice(&item.tags);

        let neg = match opts.negatives {
            NegativesMode::Adaptive => {
                let (aspects, opinions) = decode_tags(&predict_tags(g.value(p)));
                construct_adaptive(&aspects, &opinions, &item.positives, width, opts.max_candidates_per_role)?
            }
            NegativesMode::Random => construct_random(ex, &item.positives, width, rng, opts.k_policy)?,
            NegativesMode::None => construct_none(&item.positives),
        };
        positives += item.positives.len();
        negatives += neg.len();
        let pairs: Vec<PairTarget> = item.positives.iter().cloned().chain(neg).collect();

        for pair in &pairs {
            let pooled = model.heads.pool_pair(&mut g, h, pair.aspect, pair.opinion)?;
            pair_probs.push(model.heads.pair_probs(&mut g, pooled));
            pair_targets.push(pair.clone());
        }
        if opts.multitask {
            for unit in project_aspects(&pairs, &ex.gold, model.vocab.num_categories()) {
                cat_probs.push(model.heads.aspect_category_probs(&mut g, h, unit.span)?);
                cat_units.push(unit);
            }
            for unit in project_opinions(&pairs, &ex.gold) {
                sent_probs.push(model.heads.opinion_sentiment_probs(&mut g, h, unit.span)?);
                sent_units.push(unit);
            }
        }
        all_pairs.push(pairs);
    }

    let stacked = if tag_probs.len() == 1 {
        tag_probs[0]
    } else {
        g.concat_rows(&tag_probs)
    };
    let l1 = loss_tagging(&mut g, stacked, &gold_tags)?;
    let l2 = loss_pairs(&mut g, &pair_probs, &pair_targets)?;
    let (l3, l4) = if opts.multitask {
        (
            loss_category(&mut g, &cat_probs, &cat_units)?,
            loss_sentiment(&mut g, &sent_probs, &sent_units)?,
        )
    } else {
        (None, None)
    };
    let (loss, mut report) = combine(&mut g, [Some(l1), l2, l3, l4], &opts.weights);
    report.positives = positives;
    report.negatives = negatives;
    Ok(BatchObjective {
        graph: g,
        loss,
        report,
        pairs: all_pairs,
    })
}

/// Validation and test scores after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub loss: LossReport,
    pub dev: Option<Evaluation>,
    pub test: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<LossReport>,
    pub evals: Vec<EpochEval>,
    pub checkpoints: BTreeMap<usize, PathBuf>,
    pub selection: Selection,
    pub selected_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrialResult {
    pub fn eval_at(&self, epoch: usize) -> Option<&EpochEval> {
        self.evals.iter().find(|e| e.epoch == epoch)
    }

    /// Test scores at the selected epoch.
    pub fn selected_test(&self) -> Option<&Evaluation> {
        self.eval_at(self.selected_epoch).and_then(|e| e.test.as_ref())
    }
}

/// Epoch chosen by `policy`. Best-validation ties go to the earlier epoch.
pub fn select_epoch(evals: &[EpochEval], policy: Selection, report_epoch: usize) -> Result<usize> {
    match policy {
        Selection::FixedEpoch => evals
            .iter()
            .find(|e| e.epoch == report_epoch)
            .map(|e| e.epoch)
            .ok_or_else(|| Error::Checkpoint(format!("no evaluation at epoch {report_epoch}"))),
        Selection::BestValidation => {
            let mut best: Option<(usize, f64)> = None;
            for e in evals {
                if let Some(dev) = &e.dev {
                    if best.map_or(true, |(_, f)| dev.overall.f1 > f) {
                        best = Some((e.epoch, dev.overall.f1));
                    }
                }
            }
            best.map(|(e, _)| e)
                .ok_or_else(|| Error::Checkpoint("no validation scores to select from".into()))
        }
    }
}

/// Checkpoint directory chosen by `policy`.
pub fn select_checkpoint(result: &TrialResult, policy: Selection, report_epoch: usize) -> Result<PathBuf> {
    let epoch = select_epoch(&result.evals, policy, report_epoch)?;
    result
        .checkpoints
        .get(&epoch)
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoint saved for epoch {epoch}")))
}

/// A finished run: its record and the model after the last epoch.
pub struct Trained {
    pub result: TrialResult,
    pub model: Model,
}

#[derive(Serialize)]
struct StepLine<'a> {
    epoch: usize,
    step: usize,
    #[serde(flatten)]
    loss: &'a LossReport,
}

#[derive(Serialize)]
struct MetricLine<'a> {
    epoch: usize,
    split: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    by_type: &'a BTreeMap<crate::corpus::QuadType, crate::metrics::Score>,
    loss: &'a LossReport,
}

struct Logs {
    steps: BufWriter<fs::File>,
    metrics: BufWriter<fs::File>,
    dir: PathBuf,
}

impl Logs {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| {
            let path = dir.join(name);
            fs::File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| Error::io(&path, e))
        };
        Ok(Logs {
            steps: open("steps.jsonl")?,
            metrics: open("metrics.jsonl")?,
            dir: dir.to_path_buf(),
        })
    }

    fn line(&mut self, which: &str, json: String) -> Result<()> {
        let (out, name) = match which {
            "steps" => (&mut self.steps, "steps.jsonl"),
            _ => (&mut self.metrics, "metrics.jsonl"),
        };
        let path = self.dir.join(name);
        writeln!(out, "{json}").and_then(|_| out.flush()).map_err(|e| Error::io(&path, e))
    }
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mut m = LossReport::default();
    for r in reports {
        m.l1 += r.l1 / n;
        m.l2 += r.l2 / n;
        m.l3 += r.l3 / n;
        m.l4 += r.l4 / n;
        m.total += r.total / n;
        m.positives += r.positives;
        m.negatives += r.negatives;
    }
    m
}

fn nan_dump(dir: Option<&Path>, epoch: usize, step: usize, report: &LossReport, batch: &[&Prepared]) -> Error {
    let detail = serde_json::json!({
        "epoch": epoch,
        "step": step,
        "loss": report,
        "batch": batch.iter().map(|p| p.example.tokens.join(" ")).collect::<Vec<_>>(),
    });
    let mut message = format!("non-finite loss or gradient at epoch {epoch}, step {step}");
    if let Some(dir) = dir {
        let path = dir.join("nan_dump.json");
        if fs::write(&path, serde_json::to_string_pretty(&detail).unwrap_or_default()).is_ok() {
            message.push_str(&format!("; details in {}", path.display()));
        }
    } else {
        message.push_str(&format!("; {detail}"));
    }
    Error::Training(message)
}

fn score_split(model: &Model, examples: &[Example]) -> Result<Option<Evaluation>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let preds: Vec<_> = predict_examples(model, examples)?.iter().map(|p| p.quads()).collect();
    let golds: Vec<_> = examples.iter().map(|e| e.gold.clone()).collect();
    evaluate(&preds, &golds, &model.vocab).map(Some)
}

/// Trains one model from scratch with `seed`.
///
/// When `cfg.output_dir` is set the run writes `config.toml` (the resolved
/// configuration), `steps.jsonl` (one loss record per step), `metrics.jsonl`
/// (one record per evaluated split) and, if enabled, a checkpoint for every
/// evaluated epoch.
pub fn train(splits: &Splits, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    let mut model = Model::new(cfg.model_config(), splits.vocab.clone(), seed)?;
    let prepared = splits
        .train
        .iter()
        .map(|e| prepare(e, &splits.vocab))
        .collect::<Result<Vec<_>>>()?;
    let opts = StepOptions::from(cfg);
    let mut optimizer = AdamW::new(cfg.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_da7a);

    let mut logs = match &cfg.output_dir {
        Some(dir) => {
            let logs = Logs::open(dir)?;
            let mut resolved = cfg.clone();
            resolved.seeds = vec![seed];
            resolved.save(dir.join("config.toml"))?;
            Some(logs)
        }
        None => None,
    };
    let checkpoint_root = if cfg.save_checkpoints { cfg.checkpoint_root() } else { None };
    let eval_epochs = cfg.eval_epochs();

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut evals = Vec::new();
    let mut checkpoints = BTreeMap::new();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (grads, report) = {
                let obj = batch_objective(&model, &batch, &opts, &mut rng)?;
                let grads = obj.loss.map(|l| obj.graph.backward(l));
                (grads, obj.report)
            };
            let finite = report.is_finite() && grads.as_ref().map_or(true, |g| g.is_finite());
            if !finite {
                return Err(nan_dump(cfg.output_dir.as_deref(), epoch, step, &report, &batch));
            }
            if let Some(grads) = grads {
                optimizer.step(&mut model.store, &grads);
            }
            if let Some(logs) = logs.as_mut() {
                logs.line("steps", serde_json::to_string(&StepLine { epoch, step, loss: &report })?)?;
            }
            reports.push(report);
        }
        let loss = mean_report(&reports);
        epoch_losses.push(loss.clone());

        if eval_epochs.binary_search(&epoch).is_ok() {
            let dev = score_split(&model, &splits.dev)?;
            let test = score_split(&model, &splits.test)?;
            if let Some(logs) = logs.as_mut() {
                for (split, ev) in [("dev", &dev), ("test", &test)] {
                    if let Some(ev) = ev {
                        let line = MetricLine {
                            epoch,
                            split,
                            precision: ev.overall.precision,
                            recall: ev.overall.recall,
                            f1: ev.overall.f1,
                            tp: ev.overall.tp,
                            fp: ev.overall.fp,
                            fn_: ev.overall.fn_,
                            by_type: &ev.by_type,
                            loss: &loss,
                        };
                        logs.line("metrics", serde_json::to_string(&line)?)?;
                    }
                }
            }
            if let Some(root) = &checkpoint_root {
                let dir = root.join(format!("epoch-{epoch:04}"));
                checkpoint::save(&model, &dir)?;
                checkpoints.insert(epoch, dir);
            }
            log::info!(
                "seed {seed} epoch {epoch}: loss {:.4} dev F1 {} test F1 {}",
                loss.total,
                dev.as_ref().map_or("-".into(), |d| format!("{:.4}", d.overall.f1)),
                test.as_ref().map_or("-".into(), |t| format!("{:.4}", t.overall.f1)),
            );
            evals.push(EpochEval { epoch, loss, dev, test });
        }
    }

    let selection = if cfg.selection == Selection::BestValidation && splits.dev.is_empty() {
        log::warn!("no validation split; falling back to the report epoch");
        Selection::FixedEpoch
    } else {
        cfg.selection
    };
    let report_epoch = if selection == cfg.selection { cfg.report_epoch } else { cfg.report_epoch.min(cfg.epochs) };
    let selected_epoch = select_epoch(&evals, selection, report_epoch)?;
    let best_checkpoint = checkpoints.get(&selected_epoch).cloned();
    Ok(Trained {
        result: TrialResult {
            seed,
            epoch_losses,
            evals,
            checkpoints,
            selection,
            selected_epoch,
            best_checkpoint,
        },
        model,
    })
}
