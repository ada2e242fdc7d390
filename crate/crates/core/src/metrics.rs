//! Exact-match precision, recall and F1 over quadruples.
//!
//! A predicted quadruple is correct only when aspect, opinion, category and
//! sentiment all equal those of a gold quadruple of the same sentence.
//! Counts are summed over the corpus before computing the ratios.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocab, QuadType, Quadruple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Score {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    /// Sum of counts, with ratios recomputed.
    pub fn merge(&self, other: &Score) -> Score {
        Score::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

/// Score one sentence (or any pre-flattened pair of sets).
pub fn score(pred: &BTreeSet<Quadruple>, gold: &BTreeSet<Quadruple>) -> Score {
    let tp = pred.intersection(gold).count();
    Score::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

fn check_aligned(preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(Error::Invalid(format!("{preds} predicted sentences for {golds} gold sentences")));
    }
    Ok(())
}

fn as_set(quads: &[Quadruple]) -> BTreeSet<Quadruple> {
    quads.iter().copied().collect()
}

/// Micro-averaged score over aligned sentences.
pub fn score_corpus(preds: &[Vec<Quadruple>], golds: &[Vec<Quadruple>]) -> Result<Score> {
    check_aligned(preds.len(), golds.len())?;
    Ok(preds
        .iter()
        .zip(golds)
        .map(|(p, g)| score(&as_set(p), &as_set(g)))
        .fold(Score::default(), |acc, s| acc.merge(&s)))
}

/// Per-type scores. Every quadruple, predicted or gold, counts in the bucket
/// of its own type; all four buckets are always present.
pub fn score_by_type(preds: &[Vec<Quadruple>], golds: &[Vec<Quadruple>]) -> Result<BTreeMap<QuadType, Score>> {
    check_aligned(preds.len(), golds.len())?;
    let mut out: BTreeMap<QuadType, Score> = QuadType::ALL.iter().map(|&t| (t, Score::default())).collect();
    for (p, g) in preds.iter().zip(golds) {
        for t in QuadType::ALL {
            let p: BTreeSet<Quadruple> = p.iter().filter(|q| q.quad_type() == t).copied().collect();
            let g: BTreeSet<Quadruple> = g.iter().filter(|q| q.quad_type() == t).copied().collect();
            let bucket = out.get_mut(&t).expect("all types present");
            *bucket = bucket.merge(&score(&p, &g));
        }
    }
    Ok(out)
}

/// Overall and per-type scores for one prediction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Score,
    pub by_type: BTreeMap<QuadType, Score>,
}

/// Score after checking every category id against `vocab`.
pub fn evaluate(preds: &[Vec<Quadruple>], golds: &[Vec<Quadruple>], vocab: &LabelVocab) -> Result<Evaluation> {
    for q in preds.iter().chain(golds).flatten() {
        if q.category >= vocab.num_categories() {
            return Err(Error::Invalid(format!(
                "category id {} outside vocabulary of {}",
                q.category,
                vocab.num_categories()
            )));
        }
    }
    Ok(Evaluation {
        overall: score_corpus(preds, golds)?,
        by_type: score_by_type(preds, golds)?,
    })
}

/// Precision, recall and F1 statistics across trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each ratio.
pub fn aggregate_trials(trials: &[Score]) -> Result<(Summary, Summary)> {
    if trials.is_empty() {
        return Err(Error::Invalid("no trials to aggregate".into()));
    }
    let (p, sp) = mean_std(trials.iter().map(|s| s.precision));
    let (r, sr) = mean_std(trials.iter().map(|s| s.recall));
    let (f, sf) = mean_std(trials.iter().map(|s| s.f1));
    Ok((
        Summary {
            precision: p,
            recall: r,
            f1: f,
        },
        Summary {
            precision: sp,
            recall: sr,
            f1: sf,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentiment, Span};
    use proptest::prelude::*;

    fn q(a: usize, o: usize, c: usize) -> Quadruple {
        Quadruple::new(Span::explicit(a, a), Span::explicit(o, o), c, Sentiment::Positive)
    }

    #[test]
    fn counting() {
        let pred: BTreeSet<_> = [q(0, 1, 0), q(2, 3, 0)].into();
        let gold: BTreeSet<_> = [q(0, 1, 0), q(4, 5, 1)].into();
        let s = score(&pred, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        let s = score(&gold, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = score(&BTreeSet::new(), &gold);
        assert_eq!((s.precision, s.recall, s.f1, s.fn_), (0.0, 0.0, 0.0, 2));
    }

    #[test]
    fn category_or_sentiment_mismatch_is_wrong() {
        let gold: BTreeSet<_> = [q(0, 1, 0)].into();
        let mut other = q(0, 1, 0);
        other.sentiment = Sentiment::Negative;
        assert_eq!(score(&[other].into(), &gold).tp, 0);
        assert_eq!(score(&[q(0, 1, 1)].into(), &gold).tp, 0);
    }

    #[test]
    fn explicit_only_leaves_other_buckets_empty() {
        let preds = vec![vec![q(0, 1, 0)]];
        let golds = vec![vec![q(0, 1, 0), q(1, 2, 0)]];
        let by = score_by_type(&preds, &golds).unwrap();
        assert_eq!(by.len(), 4);
        for t in [QuadType::IaEo, QuadType::EaIo, QuadType::IaIo] {
            assert_eq!(by[&t], Score::default());
        }
        assert_eq!(by[&QuadType::EaEo].tp, 1);
    }

    #[test]
    fn sentences_do_not_match_across() {
        let preds = vec![vec![q(0, 1, 0)], vec![]];
        let golds = vec![vec![], vec![q(0, 1, 0)]];
        let s = score_corpus(&preds, &golds).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (0, 1, 1));
        assert!(score_corpus(&preds, &golds[..1]).is_err());
    }

    #[test]
    fn vocab_mismatch() {
        let vocab = LabelVocab::new(["a"]).unwrap();
        assert!(evaluate(&[vec![q(0, 1, 1)]], &[vec![]], &vocab).is_err());
        assert!(evaluate(&[vec![q(0, 1, 0)]], &[vec![q(0, 1, 0)]], &vocab).is_ok());
    }

    #[test]
    fn trial_aggregation() {
        let a = Score { f1: 0.5, ..Default::default() };
        let b = Score { f1: 0.6, ..Default::default() };
        let (mean, std) = aggregate_trials(&[a]).unwrap();
        assert_eq!((mean.f1, std.f1), (0.5, 0.0));
        let (mean, std) = aggregate_trials(&[a, b]).unwrap();
        assert!((mean.f1 - 0.55).abs() < 1e-12);
        assert!((std.f1 - 0.05).abs() < 1e-12);
        assert!(aggregate_trials(&[]).is_err());
    }

    fn quad_strategy() -> impl Strategy<Value = Quadruple> {
        let span = prop_oneof![(0usize..3).prop_map(|i| Span::explicit(i, i)), Just(Span::ImplicitAspect)];
        let opinion = prop_oneof![(0usize..3).prop_map(|i| Span::explicit(i, i)), Just(Span::ImplicitOpinion)];
        (span, opinion, 0usize..2, 0usize..3)
            .prop_map(|(a, o, c, s)| Quadruple::new(a, o, c, Sentiment::from_index(s).unwrap()))
    }

    proptest! {
        #[test]
        fn monotone_and_partitioned(
            pred in prop::collection::btree_set(quad_strategy(), 0..6),
            gold in prop::collection::btree_set(quad_strategy(), 0..6),
            extra in quad_strategy(),
        ) {
            let base = score(&pred, &gold);
            if gold.contains(&extra) && !pred.contains(&extra) {
                let mut more = pred.clone();
                more.insert(extra);
                let s = score(&more, &gold);
                prop_assert!(s.precision >= base.precision && s.recall >= base.recall && s.f1 >= base.f1);
            }
            if !gold.contains(&extra) {
                let mut more = pred.clone();
                more.insert(extra);
                prop_assert!(score(&more, &gold).recall <= base.recall);
            }
            let p: Vec<Quadruple> = pred.iter().copied().collect();
            let g: Vec<Quadruple> = gold.iter().copied().collect();
            let by = score_by_type(&[p], &[g]).unwrap();
            prop_assert_eq!(by.values().map(|s| s.tp).sum::<usize>(), base.tp);
            prop_assert_eq!(by.values().map(|s| s.fp).sum::<usize>(), base.fp);
            prop_assert_eq!(by.values().map(|s| s.fn_).sum::<usize>(), base.fn_);
        }
    }
}
