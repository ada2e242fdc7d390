//! Positive and negative aspect-opinion pairs for the pair classifier.
//!
//! Positives come from grouping gold quadruples by their `(aspect, opinion)`
//! key. Negatives come in three flavours:
//!
//! * `adaptive`: every pair in the Cartesian product of the aspects and
//!   opinions decoded by the *current* model that is not a gold pair;
//! * `random`: the same subtraction over randomly drawn spans;
//! * `none`: no negatives at all.
//!
//! Negatives always carry an all-zero target.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LabelVocab, Quadruple, Span};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativesMode {
    #[default]
    Adaptive,
    Random,
    None,
}

impl FromStr for NegativesMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(NegativesMode::Adaptive),
            "random" => Ok(NegativesMode::Random),
            "none" => Ok(NegativesMode::None),
            _ => Err(Error::Config(format!("unknown negatives mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// An aspect-opinion pair with its multi-label combination target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTarget {
    pub aspect: Span,
    pub opinion: Span,
    /// Active combination-label indices; empty for negatives.
    pub labels: BTreeSet<usize>,
    pub width: usize,
}

impl PairTarget {
    pub fn key(&self) -> (Span, Span) {
        (self.aspect, self.opinion)
    }

    pub fn polarity(&self) -> Polarity {
        if self.labels.is_empty() {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }

    pub fn negative(aspect: Span, opinion: Span, width: usize) -> Self {
        PairTarget {
            aspect,
            opinion,
            labels: BTreeSet::new(),
            width,
        }
    }

    /// Dense 0/1 target over all combination labels.
    pub fn target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.width];
        for &k in &self.labels {
            t[k] = 1.0;
        }
        t
    }
}

/// Groups gold quadruples into one positive per distinct pair.
pub fn reduce_gold(gold: &[Quadruple], vocab: &LabelVocab) -> Vec<PairTarget> {
    let width = vocab.num_combinations();
    let mut grouped: BTreeMap<(Span, Span), BTreeSet<usize>> = BTreeMap::new();
    for q in gold {
        grouped.entry((q.aspect, q.opinion)).or_default().insert(q.combination());
    }
    grouped
        .into_iter()
        .map(|((aspect, opinion), labels)| PairTarget {
            aspect,
            opinion,
            labels,
            width,
        })
        .collect()
}

fn subtract_positives(
    aspects: &BTreeSet<Span>,
    opinions: &BTreeSet<Span>,
    positives: &[PairTarget],
    width: usize,
) -> Vec<PairTarget> {
    let keys: BTreeSet<(Span, Span)> = positives.iter().map(PairTarget::key).collect();
    let mut out = Vec::new();
    for &a in aspects {
        for &o in opinions {
            if !keys.contains(&(a, o)) {
                out.push(PairTarget::negative(a, o, width));
            }
        }
    }
    out
}

/// Negatives from the model's own decoded aspects and opinions.
///
/// Errors when either candidate set exceeds `max_per_role`, which only happens
/// when tag decoding has gone badly wrong.
pub fn construct_adaptive(
    aspects: &BTreeSet<Span>,
    opinions: &BTreeSet<Span>,
    positives: &[PairTarget],
    width: usize,
    max_per_role: usize,
) -> Result<Vec<PairTarget>> {
    if aspects.len() > max_per_role || opinions.len() > max_per_role {
        return Err(Error::Training(format!(
            "decoded {} aspects and {} opinions, above max_candidates_per_role = {max_per_role}",
            aspects.len(),
            opinions.len()
        )));
    }
    Ok(subtract_positives(aspects, opinions, positives, width))
}

/// How many random spans to draw per role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    /// Number of distinct gold explicit spans of that role, plus one.
    #[default]
    GoldPlusOne,
    Fixed(usize),
}

/// Longest random span drawn by [`construct_random`].
pub const RANDOM_SPAN_MAX_LEN: usize = 5;

pub(crate) fn random_span(n_words: usize, rng: &mut impl Rng) -> Span {
    let start = rng.gen_range(0..n_words);
    let len = rng.gen_range(1..=RANDOM_SPAN_MAX_LEN).min(n_words - start);
    Span::explicit(start, start + len - 1)
}

/// Baseline negatives from randomly drawn spans instead of decoded ones.
pub fn construct_random(
    example: &Example,
    positives: &[PairTarget],
    width: usize,
    rng: &mut impl Rng,
    k_policy: KPolicy,
) -> Result<Vec<PairTarget>> {
    let n = example.tokens.len();
    if n == 0 {
        return Err(Error::Invalid("cannot sample spans from an empty sentence".into()));
    }
    let k_for = |gold: BTreeSet<Span>| match k_policy {
        KPolicy::Fixed(k) => k,
        KPolicy::GoldPlusOne => gold.iter().filter(|s| !s.is_implicit()).count() + 1,
    };
    let k_aspects = k_for(example.gold_aspects());
    let k_opinions = k_for(example.gold_opinions());

    let mut aspects: BTreeSet<Span> = (0..k_aspects).map(|_| random_span(n, rng)).collect();
    aspects.insert(Span::ImplicitAspect);
    let mut opinions: BTreeSet<Span> = (0..k_opinions).map(|_| random_span(n, rng)).collect();
    opinions.insert(Span::ImplicitOpinion);
    Ok(subtract_positives(&aspects, &opinions, positives, width))
}

/// The ablation without negatives.
pub fn construct_none(_positives: &[PairTarget]) -> Vec<PairTarget> {
    Vec::new()
}
