use std::fs;
use std::path::Path;

use rand::Rng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::wordpiece::WordPiece;
use super::{check_length, select_output_rows, Encoder, EncoderConfig, ImplicitTokenMode, IMPLICIT_INIT_STD};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Var};

const INIT_STD: f64 = 0.02;

/// The subset of a BERT `config.json` the encoder needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_act")]
    pub hidden_act: String,
    #[serde(default)]
    pub do_lower_case: Option<bool>,
}

fn default_type_vocab() -> usize {
    2
}

fn default_ln_eps() -> f64 {
    1e-12
}

fn default_act() -> String {
    "gelu".into()
}

struct BertLayer {
    attention: MultiHeadAttention,
    attention_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    output_norm: LayerNorm,
}

/// A BERT-architecture encoder restored from `config.json`, `vocab.txt` and
/// `model.safetensors`.
pub struct BertEncoder {
    cfg: EncoderConfig,
    bert: BertConfig,
    tokenizer: WordPiece,
    word: ParamId,
    position: ParamId,
    token_type: ParamId,
    implicit: ParamId,
    embedding_norm: LayerNorm,
    layers: Vec<BertLayer>,
}

impl BertEncoder {
    pub fn from_dir(
        cfg: EncoderConfig,
        dir: &Path,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        load_weights: bool,
    ) -> Result<Self> {
        let config_path = dir.join("config.json");
        let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let mut bert: BertConfig = serde_json::from_str(&text)?;
        if bert.hidden_act != "gelu" {
            return Err(Error::Encoder(format!("unsupported activation {:?}", bert.hidden_act)));
        }
        if bert.hidden_size % bert.num_attention_heads != 0 {
            return Err(Error::Encoder("hidden size not divisible by attention heads".into()));
        }
        let vocab_path = dir.join("vocab.txt");
        let raw = WordPiece::from_file(&vocab_path, false)?;
        let lowercase = match bert.do_lower_case {
            Some(flag) => flag,
            None => lower_case_from_tokenizer_config(dir)
                .unwrap_or_else(|| !raw.tokens().iter().any(|t| !t.starts_with('[') && t.chars().any(char::is_uppercase))),
        };
        bert.do_lower_case = Some(lowercase);
        let tokenizer = WordPiece::from_tokens(raw.tokens().to_vec(), lowercase);
        if tokenizer.len() != bert.vocab_size {
            return Err(Error::Encoder(format!(
                "vocab.txt has {} entries but config says {}",
                tokenizer.len(),
                bert.vocab_size
            )));
        }

        let d = bert.hidden_size;
        let word = store.add("encoder.embeddings.word", Matrix::randn(bert.vocab_size, d, INIT_STD, rng));
        let position = store.add(
            "encoder.embeddings.position",
            Matrix::randn(bert.max_position_embeddings, d, INIT_STD, rng),
        );
        let token_type = store.add(
            "encoder.embeddings.token_type",
            Matrix::randn(bert.type_vocab_size, d, INIT_STD, rng),
        );
        let implicit = store.add("encoder.embeddings.implicit", Matrix::randn(2, d, IMPLICIT_INIT_STD, rng));
        let eps = bert.layer_norm_eps;
        let embedding_norm = LayerNorm::new(store, "encoder.embeddings.norm", d, eps);
        let layers = (0..bert.num_hidden_layers)
            .map(|i| {
                let name = format!("encoder.layer{i}");
                BertLayer {
                    attention: MultiHeadAttention::new(
                        store,
                        &format!("{name}.attention"),
                        d,
                        bert.num_attention_heads,
                        INIT_STD,
                        rng,
                    ),
                    attention_norm: LayerNorm::new(store, &format!("{name}.attention_norm"), d, eps),
                    intermediate: Linear::new(store, &format!("{name}.intermediate"), d, bert.intermediate_size, INIT_STD, rng),
                    output: Linear::new(store, &format!("{name}.output"), bert.intermediate_size, d, INIT_STD, rng),
                    output_norm: LayerNorm::new(store, &format!("{name}.output_norm"), d, eps),
                }
            })
            .collect();

        let encoder = BertEncoder {
            cfg,
            bert,
            tokenizer,
            word,
            position,
            token_type,
            implicit,
            embedding_norm,
            layers,
        };
        if load_weights {
            encoder.load_safetensors(&dir.join("model.safetensors"), store)?;
        }
        Ok(encoder)
    }

    pub fn bert_config(&self) -> &BertConfig {
        &self.bert
    }

    pub fn tokenizer(&self) -> &WordPiece {
        &self.tokenizer
    }

    /// Our parameter id paired with its name in a Hugging Face BERT checkpoint.
    fn checkpoint_names(&self) -> Vec<(ParamId, String)> {
        let mut names = vec![
            (self.word, "embeddings.word_embeddings.weight".to_owned()),
            (self.position, "embeddings.position_embeddings.weight".to_owned()),
            (self.token_type, "embeddings.token_type_embeddings.weight".to_owned()),
            (self.embedding_norm.gamma, "embeddings.LayerNorm.weight".to_owned()),
            (self.embedding_norm.beta, "embeddings.LayerNorm.bias".to_owned()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("encoder.layer.{i}");
            let linears = [
                (&layer.attention.query, format!("{p}.attention.self.query")),
                (&layer.attention.key, format!("{p}.attention.self.key")),
                (&layer.attention.value, format!("{p}.attention.self.value")),
                (&layer.attention.output, format!("{p}.attention.output.dense")),
                (&layer.intermediate, format!("{p}.intermediate.dense")),
                (&layer.output, format!("{p}.output.dense")),
            ];
            for (lin, name) in linears {
                names.push((lin.weight, format!("{name}.weight")));
                names.push((lin.bias, format!("{name}.bias")));
            }
            for (norm, name) in [
                (&layer.attention_norm, format!("{p}.attention.output.LayerNorm")),
                (&layer.output_norm, format!("{p}.output.LayerNorm")),
            ] {
                names.push((norm.gamma, format!("{name}.weight")));
                names.push((norm.beta, format!("{name}.bias")));
            }
        }
        names
    }

    fn load_safetensors(&self, path: &Path, store: &mut ParamStore) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Encoder(format!("{}: {e}", path.display())))?;
        for (id, name) in self.checkpoint_names() {
            let legacy = name.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
            let candidates = [name.clone(), format!("bert.{name}"), legacy.clone(), format!("bert.{legacy}")];
            let view = candidates
                .iter()
                .find_map(|n| tensors.tensor(n).ok())
                .ok_or_else(|| Error::Encoder(format!("{}: missing tensor {name}", path.display())))?;
            let values: Vec<f64> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                other => return Err(Error::Encoder(format!("tensor {name}: unsupported dtype {other:?}"))),
            };
            let target = store.get_mut(id);
            if values.len() != target.len() {
                return Err(Error::Encoder(format!(
                    "tensor {name}: shape {:?} does not match expected {:?}",
                    view.shape(),
                    target.shape()
                )));
            }
            target.data_mut().copy_from_slice(&values);
        }
        Ok(())
    }
}

fn lower_case_from_tokenizer_config(dir: &Path) -> Option<bool> {
    let text = fs::read_to_string(dir.join("tokenizer_config.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("do_lower_case")?.as_bool()
}

impl Encoder for BertEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn dim(&self) -> usize {
        self.bert.hidden_size
    }

    fn encode(&self, g: &mut Graph, words: &[String]) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Encoder("cannot encode an empty sentence".into()));
        }
        let dedicated = self.cfg.implicit_token_mode == ImplicitTokenMode::Dedicated;
        let mut ids = vec![self.tokenizer.cls_id()?];
        let mut first_piece = Vec::with_capacity(words.len());
        for w in words {
            first_piece.push(ids.len());
            ids.extend(self.tokenizer.word_ids(w)?);
        }
        let body = ids.len();
        let len = body + if dedicated { 3 } else { 1 };
        check_length(len, self.cfg.max_len.min(self.bert.max_position_embeddings))?;

        let table = g.param(self.word);
        let head = g.gather_rows(table, &ids);
        let sep = g.gather_rows(table, &[self.tokenizer.sep_id()?]);
        let x = if dedicated {
            let implicit = g.param(self.implicit);
            g.concat_rows(&[head, implicit, sep])
        } else {
            g.concat_rows(&[head, sep])
        };
        let positions = g.param(self.position);
        let pos = g.gather_rows(positions, &(0..len).collect::<Vec<_>>());
        let x = g.add(x, pos);
        let types = g.param(self.token_type);
        let segment = g.gather_rows(types, &[0]);
        let x = g.add_row(x, segment);
        let mut x = self.embedding_norm.forward(g, x);

        for layer in &self.layers {
            let attended = layer.attention.forward(g, x, x);
            let h = g.add(x, attended);
            let h = layer.attention_norm.forward(g, h);
            let f = layer.intermediate.forward(g, h);
            let f = g.gelu(f);
            let f = layer.output.forward(g, f);
            let h2 = g.add(h, f);
            x = layer.output_norm.forward(g, h2);
        }

        let implicit = if dedicated { [body, body + 1] } else { [0, 0] };
        Ok(select_output_rows(g, x, &first_piece, implicit))
    }

    fn save_assets(&self, dir: &Path) -> Result<()> {
        let config_path = dir.join("config.json");
        fs::write(&config_path, serde_json::to_string_pretty(&self.bert)?).map_err(|e| Error::io(&config_path, e))?;
        let vocab_path = dir.join("vocab.txt");
        let mut vocab = self.tokenizer.tokens().join("\n");
        vocab.push('\n');
        fs::write(&vocab_path, vocab).map_err(|e| Error::io(&vocab_path, e))
    }
}
