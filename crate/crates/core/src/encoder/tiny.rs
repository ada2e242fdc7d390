use std::path::Path;

use rand::Rng;

use super::{check_length, select_output_rows, Encoder, EncoderConfig, ImplicitTokenMode, IMPLICIT_INIT_STD};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Var};

// rows of the special-token table
const CLS: usize = 0;
const SEP: usize = 1;
const IMPLICIT_ASPECT: usize = 2;
const IMPLICIT_OPINION: usize = 3;

struct MixingLayer {
    attention: MultiHeadAttention,
    attention_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNorm,
}

/// Hash-bucket word embeddings followed by `tiny_layers` self-attention blocks.
///
/// Words are lowercased and hashed (FNV-1a, salted with the bucket count) into
/// `tiny_buckets` embedding rows. Position embeddings only enter inside the
/// mixing layers, so with zero layers each output row depends on its own word
/// alone.
pub struct TinyEncoder {
    cfg: EncoderConfig,
    words: ParamId,
    special: ParamId,
    positions: ParamId,
    layers: Vec<MixingLayer>,
}

pub(crate) fn bucket(word: &str, buckets: usize) -> usize {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325 ^ (buckets as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in word.to_lowercase().bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    (hash % buckets as u64) as usize
}

impl TinyEncoder {
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let std = 1.0 / (d as f64).sqrt();
        let words = store.add("encoder.word_embeddings", Matrix::randn(cfg.tiny_buckets, d, std, rng));
        let mut special = Matrix::randn(4, d, std, rng);
        for row in [IMPLICIT_ASPECT, IMPLICIT_OPINION] {
            let fresh = Matrix::randn(1, d, IMPLICIT_INIT_STD, rng);
            special.row_mut(row).copy_from_slice(fresh.data());
        }
        let special = store.add("encoder.special_embeddings", special);
        let positions = store.add("encoder.position_embeddings", Matrix::randn(cfg.max_len, d, std, rng));
        let layers = (0..cfg.tiny_layers)
            .map(|i| {
                let name = format!("encoder.layer{i}");
                MixingLayer {
                    attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d, cfg.tiny_heads, std, rng),
                    attention_norm: LayerNorm::new(store, &format!("{name}.attention_norm"), d, 1e-5),
                    ffn_in: Linear::new(store, &format!("{name}.ffn_in"), d, 2 * d, std, rng),
                    ffn_out: Linear::new(store, &format!("{name}.ffn_out"), 2 * d, d, std, rng),
                    ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d, 1e-5),
                }
            })
            .collect();
        TinyEncoder {
            cfg,
            words,
            special,
            positions,
            layers,
        }
    }
}

impl Encoder for TinyEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn encode(&self, g: &mut Graph, words: &[String]) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Encoder("cannot encode an empty sentence".into()));
        }
        let n = words.len();
        let dedicated = self.cfg.implicit_token_mode == ImplicitTokenMode::Dedicated;
        // [CLS] w1..wn ([IA] [IO]) [SEP]
        let len = if dedicated { n + 4 } else { n + 2 };
        check_length(len, self.cfg.max_len)?;

        let buckets: Vec<usize> = words.iter().map(|w| bucket(w, self.cfg.tiny_buckets)).collect();
        let table = g.param(self.words);
        let word_rows = g.gather_rows(table, &buckets);
        let special = g.param(self.special);
        let cls = g.gather_rows(special, &[CLS]);
        let tail: &[usize] = if dedicated {
            &[IMPLICIT_ASPECT, IMPLICIT_OPINION, SEP]
        } else {
            &[SEP]
        };
        let tail = g.gather_rows(special, tail);
        let mut x = g.concat_rows(&[cls, word_rows, tail]);

        if !self.layers.is_empty() {
            let positions = g.param(self.positions);
            let pos = g.gather_rows(positions, &(0..len).collect::<Vec<_>>());
            x = g.add(x, pos);
        }
        for layer in &self.layers {
            let attended = layer.attention.forward(g, x, x);
            let h = g.add(x, attended);
            let h = layer.attention_norm.forward(g, h);
            let f = layer.ffn_in.forward(g, h);
            let f = g.gelu(f);
            let f = layer.ffn_out.forward(g, f);
            let h2 = g.add(h, f);
            x = layer.ffn_norm.forward(g, h2);
        }

        let word_positions: Vec<usize> = (1..=n).collect();
        let implicit = if dedicated { [n + 1, n + 2] } else { [0, 0] };
        Ok(select_output_rows(g, x, &word_positions, implicit))
    }

    fn save_assets(&self, _dir: &Path) -> Result<()> {
        Ok(())
    }
}
