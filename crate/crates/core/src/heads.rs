//! Task heads over the token matrix.
//!
//! * a softmax tagger over the nine extended BIOES tags;
//! * attention pooling of an aspect-opinion pair followed by independent
//!   sigmoids over every category x sentiment combination;
//! * the same pool-then-sigmoid pattern for aspect categories and opinion
//!   sentiments, used as auxiliary tasks during training.
//!
//! Pooling attends from a single trainable query over the stacked span rows
//! (aspect rows first, then opinion rows). No positional information enters
//! the pool, so the result does not depend on row order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentiment, Span};
use crate::error::{Error, Result};
use crate::nn::{Linear, MultiHeadAttention};
use crate::tagseq::{Tag, TagSequence, NUM_TAGS};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Var};

const INIT_STD: f64 = 0.02;

/// Strict threshold on sigmoid outputs.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Query attention with learned projections.
    #[default]
    Multihead,
    /// Plain average of the span rows.
    Mean,
}

#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub query: ParamId,
    pub attention: MultiHeadAttention,
    pub mode: AttentionMode,
}

impl AttentionPool {
    fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, mode: AttentionMode, rng: &mut impl Rng) -> Self {
        AttentionPool {
            query: store.add(format!("{name}.query"), Matrix::randn(1, dim, INIT_STD, rng)),
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), dim, heads, INIT_STD, rng),
            mode,
        }
    }

    /// Pools `rows` (`n x d`) into a `1 x d` vector. The second value holds the
    /// per-head `1 x n` attention weights (empty in mean mode).
    pub fn pool_with_weights(&self, g: &mut Graph, rows: Var) -> (Var, Vec<Var>) {
        match self.mode {
            AttentionMode::Mean => (g.mean_rows(rows), Vec::new()),
            AttentionMode::Multihead => {
                let q = g.param(self.query);
                self.attention.forward_with_weights(g, q, rows)
            }
        }
    }

    pub fn pool(&self, g: &mut Graph, rows: Var) -> Var {
        self.pool_with_weights(g, rows).0
    }
}

/// Values read off one scored aspect-opinion pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairProbe {
    pub aspect: Span,
    pub opinion: Span,
    pub pooled: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub tagger: Linear,
    pub pair_pool: AttentionPool,
    pub pair_classifier: Linear,
    pub category_pool: AttentionPool,
    pub category_classifier: Linear,
    pub sentiment_pool: AttentionPool,
    pub sentiment_classifier: Linear,
    pub dim: usize,
    pub num_categories: usize,
}

fn span_rows(aspect: Option<Span>, opinion: Option<Span>, n_words: usize) -> Vec<usize> {
    let mut rows = Vec::new();
    if let Some(a) = aspect {
        rows.extend(a.rows(n_words));
    }
    if let Some(o) = opinion {
        rows.extend(o.rows(n_words));
    }
    rows
}

impl Heads {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        num_categories: usize,
        head_count: usize,
        mode: AttentionMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if head_count == 0 || dim % head_count != 0 {
            return Err(Error::Config(format!(
                "hidden size {dim} is not divisible by head_count {head_count}"
            )));
        }
        if num_categories == 0 {
            return Err(Error::Config("label vocabulary has no categories".into()));
        }
        let combos = num_categories * Sentiment::COUNT;
        Ok(Heads {
            tagger: Linear::new(store, "heads.tagger", dim, NUM_TAGS, INIT_STD, rng),
            pair_pool: AttentionPool::new(store, "heads.pair", dim, head_count, mode, rng),
            pair_classifier: Linear::new(store, "heads.pair.classifier", dim, combos, INIT_STD, rng),
            category_pool: AttentionPool::new(store, "heads.category", dim, head_count, mode, rng),
            category_classifier: Linear::new(store, "heads.category.classifier", dim, num_categories, INIT_STD, rng),
            sentiment_pool: AttentionPool::new(store, "heads.sentiment", dim, head_count, mode, rng),
            sentiment_classifier: Linear::new(store, "heads.sentiment.classifier", dim, Sentiment::COUNT, INIT_STD, rng),
            dim,
            num_categories,
        })
    }

    fn check_dim(&self, g: &Graph, h: Var) -> Result<()> {
        let cols = g.shape(h).1;
        if cols != self.dim {
            return Err(Error::Shape(format!("token matrix has width {cols}, heads expect {}", self.dim)));
        }
        Ok(())
    }

    /// `l x 9` tag distribution, one softmax row per token.
    pub fn label_distribution(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.check_dim(g, h)?;
        let logits = self.tagger.forward(g, h);
        Ok(g.softmax_rows(logits))
    }

    /// Attention-pooled representation of an aspect-opinion pair.
    pub fn pool_pair(&self, g: &mut Graph, h: Var, aspect: Span, opinion: Span) -> Result<Var> {
        self.check_dim(g, h)?;
        let n_words = g.shape(h).0 - 2;
        let stack = g.gather_rows(h, &span_rows(Some(aspect), Some(opinion), n_words));
        Ok(self.pair_pool.pool(g, stack))
    }

    /// Sigmoid probabilities over the combination labels.
    pub fn pair_probs(&self, g: &mut Graph, pooled: Var) -> Var {
        let logits = self.pair_classifier.forward(g, pooled);
        g.sigmoid(logits)
    }

    pub fn aspect_category_probs(&self, g: &mut Graph, h: Var, aspect: Span) -> Result<Var> {
        self.check_dim(g, h)?;
        let n_words = g.shape(h).0 - 2;
        let stack = g.gather_rows(h, &span_rows(Some(aspect), None, n_words));
        let pooled = self.category_pool.pool(g, stack);
        let logits = self.category_classifier.forward(g, pooled);
        Ok(g.sigmoid(logits))
    }

    pub fn opinion_sentiment_probs(&self, g: &mut Graph, h: Var, opinion: Span) -> Result<Var> {
        self.check_dim(g, h)?;
        let n_words = g.shape(h).0 - 2;
        let stack = g.gather_rows(h, &span_rows(None, Some(opinion), n_words));
        let pooled = self.sentiment_pool.pool(g, stack);
        let logits = self.sentiment_classifier.forward(g, pooled);
        Ok(g.sigmoid(logits))
    }

    pub fn probe_pair(&self, g: &mut Graph, h: Var, aspect: Span, opinion: Span) -> Result<PairProbe> {
        let pooled = self.pool_pair(g, h, aspect, opinion)?;
        let probs = self.pair_probs(g, pooled);
        Ok(PairProbe {
            aspect,
            opinion,
            pooled: g.value(pooled).data().to_vec(),
            probs: g.value(probs).data().to_vec(),
        })
    }
}

/// Row-wise argmax; ties go to the lowest tag id.
pub fn predict_tags(probs: &Matrix) -> TagSequence {
    let tags = (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            Tag::from_id(best).expect("row width is the tag count")
        })
        .collect();
    TagSequence(tags)
}
