//! Training losses.
//!
//! All four terms are ordinary (negated) cross-entropies, so every term is
//! non-negative:
//!
//! * tagging: mean negative log-probability of the gold tag per token;
//! * pairs: binary cross-entropy over all combination labels of all pairs,
//!   positives and negatives together;
//! * category / sentiment: binary cross-entropy over the aspects (resp.
//!   opinions) that occur in those pairs.
//!
//! The total is a weighted sum with unit weights by default.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Quadruple, Sentiment, Span};
use crate::error::{Error, Result};
use crate::negatives::PairTarget;
use crate::tensor::{Graph, Matrix, Var};

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.l3, self.l4, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tagging: f64,
    pub pairs: f64,
    pub category: f64,
    pub sentiment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tagging: 1.0,
            pairs: 1.0,
            category: 1.0,
            sentiment: 1.0,
        }
    }
}

/// Unweighted sum of the four terms.
pub fn total_loss(l1: f64, l2: f64, l3: f64, l4: f64) -> LossReport {
    LossReport {
        l1,
        l2,
        l3,
        l4,
        total: l1 + l2 + l3 + l4,
        ..Default::default()
    }
}

/// Mean negative log-likelihood of `gold` tag ids under the `l x 9` matrix `probs`.
pub fn loss_tagging(g: &mut Graph, probs: Var, gold: &[usize]) -> Result<Var> {
    let rows = g.shape(probs).0;
    if rows != gold.len() {
        return Err(Error::Shape(format!("{rows} tag distributions for {} gold tags", gold.len())));
    }
    Ok(g.nll(probs, gold, LOG_EPS))
}

fn stacked_bce(g: &mut Graph, probs: &[Var], targets: Vec<Vec<f64>>, what: &str) -> Result<Option<Var>> {
    if probs.is_empty() {
        log::warn!("no {what} units in batch; loss term is zero");
        return Ok(None);
    }
    if probs.len() != targets.len() {
        return Err(Error::Shape(format!("{} {what} outputs for {} targets", probs.len(), targets.len())));
    }
    let width = targets[0].len();
    for &p in probs {
        if g.shape(p) != (1, width) {
            return Err(Error::Shape(format!("{what} output {:?} but targets have width {width}", g.shape(p))));
        }
    }
    let stacked = if probs.len() == 1 { probs[0] } else { g.concat_rows(probs) };
    let targets = Matrix::from_rows(&targets);
    Ok(Some(g.bce(stacked, targets, LOG_EPS)))
}

/// Binary cross-entropy over `|pairs| x |C x S|` terms. `None` when there are no pairs.
pub fn loss_pairs(g: &mut Graph, probs: &[Var], pairs: &[PairTarget]) -> Result<Option<Var>> {
    stacked_bce(g, probs, pairs.iter().map(PairTarget::target).collect(), "pair")
}

/// One aspect or opinion drawn from the pair set, with its auxiliary target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub span: Span,
    pub labels: BTreeSet<usize>,
    pub width: usize,
}

impl Unit {
    pub fn target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.width];
        for &k in &self.labels {
            t[k] = 1.0;
        }
        t
    }
}

fn project(
    spans: impl Iterator<Item = Span>,
    gold: &[Quadruple],
    width: usize,
    key: impl Fn(&Quadruple) -> (Span, usize),
) -> Vec<Unit> {
    let mut labels: BTreeMap<Span, BTreeSet<usize>> = BTreeMap::new();
    for q in gold {
        let (span, label) = key(q);
        labels.entry(span).or_default().insert(label);
    }
    let distinct: BTreeSet<Span> = spans.collect();
    distinct
        .into_iter()
        .map(|span| Unit {
            span,
            labels: labels.get(&span).cloned().unwrap_or_default(),
            width,
        })
        .collect()
}

/// Distinct aspects of `pairs` with the union of their gold categories;
/// aspects that only occur in negatives get an all-zero target.
pub fn project_aspects(pairs: &[PairTarget], gold: &[Quadruple], num_categories: usize) -> Vec<Unit> {
    project(pairs.iter().map(|p| p.aspect), gold, num_categories, |q| (q.aspect, q.category))
}

/// Distinct opinions of `pairs` with the union of their gold sentiments.
pub fn project_opinions(pairs: &[PairTarget], gold: &[Quadruple]) -> Vec<Unit> {
    project(pairs.iter().map(|p| p.opinion), gold, Sentiment::COUNT, |q| {
        (q.opinion, q.sentiment.index())
    })
}

pub fn loss_category(g: &mut Graph, probs: &[Var], units: &[Unit]) -> Result<Option<Var>> {
    stacked_bce(g, probs, units.iter().map(Unit::target).collect(), "aspect")
}

pub fn loss_sentiment(g: &mut Graph, probs: &[Var], units: &[Unit]) -> Result<Option<Var>> {
    stacked_bce(g, probs, units.iter().map(Unit::target).collect(), "opinion")
}

/// Weighted sum of the available terms as a graph node, plus the report.
pub fn combine(
    g: &mut Graph,
    terms: [Option<Var>; 4],
    weights: &LossWeights,
) -> (Option<Var>, LossReport) {
    let w = [weights.tagging, weights.pairs, weights.category, weights.sentiment];
    let mut values = [0.0; 4];
    let mut parts = Vec::new();
    for (i, term) in terms.iter().enumerate() {
        if let Some(v) = *term {
            values[i] = g.value(v).item();
            parts.push(if w[i] == 1.0 { v } else { g.scale(v, w[i]) });
        }
    }
    let total = match parts.len() {
        0 => None,
        1 => Some(parts[0]),
        _ => Some(g.sum(&parts)),
    };
    let mut report = total_loss(values[0], values[1], values[2], values[3]);
    report.total = total.map_or(0.0, |t| g.value(t).item());
    (total, report)
}
