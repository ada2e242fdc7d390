//! Encoder plus heads plus the label vocabulary they were built for.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelVocab;
use crate::encoder::{build_encoder, Encoder, EncoderConfig};
use crate::error::Result;
use crate::heads::{AttentionMode, Heads};
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head_count: usize,
    pub attention_mode: AttentionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            head_count: 8,
            attention_mode: AttentionMode::Multihead,
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: LabelVocab,
    pub store: ParamStore,
    pub encoder: Box<dyn Encoder>,
    pub heads: Heads,
}

impl Model {
    /// Freshly initialised model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, vocab: LabelVocab, seed: u64) -> Result<Self> {
        Self::build(config, vocab, seed, None, true)
    }

    pub(crate) fn build(
        config: ModelConfig,
        vocab: LabelVocab,
        seed: u64,
        assets: Option<&Path>,
        load_weights: bool,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = build_encoder(&config.encoder, &mut store, &mut rng, assets, load_weights)?;
        let heads = Heads::new(
            &mut store,
            encoder.dim(),
            vocab.num_categories(),
            config.head_count,
            config.attention_mode,
            &mut rng,
        )?;
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            heads,
        })
    }

    /// Token matrix `H` and tag distribution `P` for one sentence.
    pub fn forward_tokens(&self, g: &mut Graph, words: &[String]) -> Result<(Var, Var)> {
        let h = self.encoder.encode(g, words)?;
        let p = self.heads.label_distribution(g, h)?;
        Ok((h, p))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.count_scalars("")
    }
}
