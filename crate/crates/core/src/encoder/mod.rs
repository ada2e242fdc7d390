//! Context encoders producing one row per word plus the implicit aspect and
//! opinion rows.
//!
//! Two implementations share the [`Encoder`] trait: [`TinyEncoder`], a small
//! seeded model meant for tests and desk-scale runs, and [`BertEncoder`], which
//! loads a BERT-style checkpoint from disk. Both honour [`ImplicitTokenMode`]:
//! with `dedicated` the `[IA]`/`[IO]` rows come from two extra vocabulary
//! entries appended after the last word, with `cls` both rows are the
//! sentence-start summary vector.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

mod bert;
mod tiny;
pub mod wordpiece;

pub use bert::{BertConfig, BertEncoder};
pub use tiny::TinyEncoder;

/// Prefix shared by every encoder parameter name.
pub const PARAM_PREFIX: &str = "encoder.";

/// Environment variable naming the directory searched for pretrained models.
pub const MODEL_CACHE_ENV: &str = "IACOS_MODEL_CACHE";

/// Std of the freshly added `[IA]`/`[IO]` embedding rows.
pub const IMPLICIT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Tiny,
    Pretrained,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImplicitTokenMode {
    #[default]
    Dedicated,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Hidden size of the tiny encoder; pretrained encoders take theirs from the checkpoint.
    pub dim: usize,
    /// Maximum sequence length including wrapper and implicit tokens.
    pub max_len: usize,
    pub implicit_token_mode: ImplicitTokenMode,
    /// Local directory, or a name looked up under `$IACOS_MODEL_CACHE`.
    pub pretrained_id: Option<String>,
    pub tiny_layers: usize,
    pub tiny_heads: usize,
    pub tiny_buckets: usize,
    /// Exclude encoder weights from optimisation.
    pub freeze: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Tiny,
            dim: 16,
            max_len: 256,
            implicit_token_mode: ImplicitTokenMode::Dedicated,
            pretrained_id: None,
            tiny_layers: 1,
            tiny_heads: 2,
            tiny_buckets: 4096,
            freeze: false,
        }
    }
}

impl EncoderConfig {
    pub fn tiny(dim: usize) -> Self {
        EncoderConfig {
            dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EncoderKind::Tiny {
            if self.dim == 0 {
                return Err(Error::Config("encoder dim must be positive".into()));
            }
            if self.tiny_heads == 0 || self.dim % self.tiny_heads != 0 {
                return Err(Error::Config(format!(
                    "encoder dim {} not divisible by tiny_heads {}",
                    self.dim, self.tiny_heads
                )));
            }
            if self.tiny_buckets == 0 {
                return Err(Error::Config("tiny_buckets must be positive".into()));
            }
        }
        if self.max_len < 5 {
            return Err(Error::Config("max_len must leave room for at least one word".into()));
        }
        if self.kind == EncoderKind::Pretrained && self.pretrained_id.is_none() {
            return Err(Error::Config("pretrained encoder needs pretrained_id".into()));
        }
        Ok(())
    }
}

pub trait Encoder: Send + Sync {
    fn config(&self) -> &EncoderConfig;

    fn dim(&self) -> usize;

    /// Encodes `words` into an `(n + 2) x d` matrix whose last two rows are the
    /// implicit aspect and implicit opinion representations.
    fn encode(&self, g: &mut Graph, words: &[String]) -> Result<Var>;

    /// Writes whatever besides tensors is needed to rebuild this encoder.
    fn save_assets(&self, dir: &Path) -> Result<()>;
}

/// Parameters the optimiser may update; empty when the encoder is frozen.
pub fn trainable_parameters(store: &ParamStore) -> Vec<ParamId> {
    store.trainable_ids(PARAM_PREFIX)
}

/// Finds the directory of a pretrained model.
pub fn resolve_pretrained(id: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(id);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Some(cache) = std::env::var_os(MODEL_CACHE_ENV) {
        let cache = PathBuf::from(cache);
        for candidate in [cache.join(id), cache.join(id.replace('/', "--"))] {
            if candidate.is_dir() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::Encoder(format!(
        "pretrained model {id:?} not found locally; pass a directory or place it under ${MODEL_CACHE_ENV}"
    )))
}

/// Builds an encoder, registering its parameters in `store`.
///
/// `assets` overrides where a pretrained encoder reads its tokenizer and config;
/// when `load_weights` is false the pretrained tensors are left randomly
/// initialised (used when restoring from a checkpoint).
pub fn build_encoder(
    cfg: &EncoderConfig,
    store: &mut ParamStore,
    rng: &mut impl Rng,
    assets: Option<&Path>,
    load_weights: bool,
) -> Result<Box<dyn Encoder>> {
    cfg.validate()?;
    let encoder: Box<dyn Encoder> = match cfg.kind {
        EncoderKind::Tiny => Box::new(TinyEncoder::new(cfg.clone(), store, rng)),
        EncoderKind::Pretrained => {
            let dir = match assets {
                Some(dir) => dir.to_path_buf(),
                None => resolve_pretrained(cfg.pretrained_id.as_deref().unwrap_or_default())?,
            };
            Box::new(BertEncoder::from_dir(cfg.clone(), &dir, store, rng, load_weights)?)
        }
    };
    if cfg.freeze {
        store.set_trainable(PARAM_PREFIX, false);
    }
    Ok(encoder)
}

/// Rows of the final matrix: the chosen word rows then the two implicit rows.
pub(crate) fn select_output_rows(
    g: &mut Graph,
    hidden: Var,
    word_rows: &[usize],
    implicit_rows: [usize; 2],
) -> Var {
    let mut rows = word_rows.to_vec();
    rows.extend(implicit_rows);
    g.gather_rows(hidden, &rows)
}

pub(crate) fn check_length(len: usize, max_len: usize) -> Result<()> {
    if len > max_len {
        return Err(Error::Encoder(format!(
            "input needs {len} positions but max_len is {max_len}; refusing to truncate"
        )));
    }
    Ok(())
}
