//! Layers built on the tape: linear maps, layer norm and multi-head attention.

use rand::Rng;

use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Var};

/// `y = x W^T + b`, weight stored as `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, std: f64, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), Matrix::randn(output, input, std, rng)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, output)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).cols()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.weight"), Matrix::filled(1, dim, 1.0)),
            beta: store.add(format!("{name}.bias"), Matrix::zeros(1, dim)),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Scaled dot-product attention split over `heads` column blocks.
///
/// `q` is `m x d`, `k` and `v` are `n x d`; returns the `m x d` context and the
/// per-head `m x n` weight matrices.
pub fn split_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> (Var, Vec<Var>) {
    let d = g.shape(q).1;
    assert_eq!(d % heads, 0, "dimension {d} not divisible by {heads} heads");
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut contexts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * head_dim, head_dim),
                g.slice_cols(k, h * head_dim, head_dim),
                g.slice_cols(v, h * head_dim, head_dim),
            )
        };
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let a = g.softmax_rows(scores);
        contexts.push(g.matmul(a, vh));
        weights.push(a);
    }
    let ctx = if heads == 1 { contexts[0] } else { g.concat_cols(&contexts) };
    (ctx, weights)
}

/// Multi-head attention with learned query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, std: f64, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, std, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, std, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, std, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, std, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, memory: Var) -> Var {
        self.forward_with_weights(g, queries, memory).0
    }

    pub fn forward_with_weights(&self, g: &mut Graph, queries: Var, memory: Var) -> (Var, Vec<Var>) {
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, memory);
        let v = self.value.forward(g, memory);
        let (ctx, weights) = split_head_attention(g, q, k, v, self.heads);
        (self.output.forward(g, ctx), weights)
    }
}
