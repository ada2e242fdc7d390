//! Flat training configuration, read from TOML and overridable by `key=value`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderKind, ImplicitTokenMode};
use crate::error::{Error, Result};
use crate::heads::AttentionMode;
use crate::model::ModelConfig;
use crate::negatives::{KPolicy, NegativesMode};
use crate::objective::LossWeights;
use crate::optim::AdamWConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    #[default]
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    FixedEpoch,
    BestValidation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Run directory for logs, the resolved config and checkpoints.
    pub output_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub save_checkpoints: bool,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seeds: Vec<u64>,
    pub eval_every: usize,
    pub selection: Selection,
    pub report_epoch: usize,

    pub negatives_mode: NegativesMode,
    pub max_candidates_per_role: usize,
    /// Random spans per role for `negatives_mode = "random"`; unset means gold + 1.
    pub random_k: Option<usize>,
    pub multitask: Switch,
    pub weight_tagging: f64,
    pub weight_pairs: f64,
    pub weight_category: f64,
    pub weight_sentiment: f64,

    pub head_count: usize,
    pub attention_mode: AttentionMode,
    pub implicit_token_mode: ImplicitTokenMode,
    pub encoder: EncoderKind,
    pub encoder_dim: usize,
    pub pretrained_id: Option<String>,
    pub max_len: usize,
    pub tiny_layers: usize,
    pub tiny_heads: usize,
    pub tiny_buckets: usize,
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let adam = AdamWConfig::default();
        TrainConfig {
            train_path: None,
            dev_path: None,
            test_path: None,
            output_dir: None,
            checkpoint_dir: None,
            save_checkpoints: true,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            epochs: 500,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            seeds: vec![42],
            eval_every: 10,
            selection: Selection::FixedEpoch,
            report_epoch: 400,
            negatives_mode: NegativesMode::Adaptive,
            max_candidates_per_role: 64,
            random_k: None,
            multitask: Switch::On,
            weight_tagging: 1.0,
            weight_pairs: 1.0,
            weight_category: 1.0,
            weight_sentiment: 1.0,
            head_count: 8,
            attention_mode: AttentionMode::Multihead,
            implicit_token_mode: enc.implicit_token_mode,
            encoder: enc.kind,
            encoder_dim: enc.dim,
            pretrained_id: None,
            max_len: enc.max_len,
            tiny_layers: enc.tiny_layers,
            tiny_heads: enc.tiny_heads,
            tiny_buckets: enc.tiny_buckets,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration as TOML.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Applies one `key=value` override. The value is read as a TOML value
    /// when it parses as one and as a bare string otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply_overrides(&[(key, value)])
    }

    /// Applies several overrides, validating only the final result. On error
    /// `self` is left unchanged.
    pub fn apply_overrides(&mut self, overrides: &[(&str, &str)]) -> Result<()> {
        let mut table = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for &(key, value) in overrides {
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_owned()));
            let parsed = match (key, parsed) {
                ("seeds", toml::Value::Integer(i)) => toml::Value::Array(vec![toml::Value::Integer(i)]),
                (_, v) => v,
            };
            table
                .as_table_mut()
                .expect("config serialises to a table")
                .insert(key.to_owned(), parsed);
        }
        let updated: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.max_candidates_per_role == 0 {
            return fail("max_candidates_per_role must be at least 1".into());
        }
        if self.selection == Selection::FixedEpoch && self.report_epoch > self.epochs {
            return fail(format!(
                "report_epoch {} is beyond epochs {}; lower it or use selection = \"best_validation\"",
                self.report_epoch, self.epochs
            ));
        }
        if self.report_epoch == 0 {
            return fail("report_epoch must be at least 1".into());
        }
        self.model_config().encoder.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                kind: self.encoder,
                dim: self.encoder_dim,
                max_len: self.max_len,
                implicit_token_mode: self.implicit_token_mode,
                pretrained_id: self.pretrained_id.clone(),
                tiny_layers: self.tiny_layers,
                tiny_heads: self.tiny_heads,
                tiny_buckets: self.tiny_buckets,
                freeze: self.freeze_encoder,
            },
            head_count: self.head_count,
            attention_mode: self.attention_mode,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            tagging: self.weight_tagging,
            pairs: self.weight_pairs,
            category: self.weight_category,
            sentiment: self.weight_sentiment,
        }
    }

    pub fn k_policy(&self) -> KPolicy {
        self.random_k.map_or(KPolicy::GoldPlusOne, KPolicy::Fixed)
    }

    pub fn checkpoint_root(&self) -> Option<PathBuf> {
        self.checkpoint_dir
            .clone()
            .or_else(|| self.output_dir.as_ref().map(|d| d.join("checkpoints")))
    }

    /// Epochs at which the model is evaluated: every `eval_every`-th epoch,
    /// the report epoch and the last epoch.
    pub fn eval_epochs(&self) -> Vec<usize> {
        let mut epochs: Vec<usize> = (1..=self.epochs).filter(|e| e % self.eval_every == 0).collect();
        if self.report_epoch <= self.epochs {
            epochs.push(self.report_epoch);
        }
        epochs.push(self.epochs);
        epochs.sort_unstable();
        epochs.dedup();
        epochs
    }
}
