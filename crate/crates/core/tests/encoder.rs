mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use iacos::checkpoint;
use iacos::encoder::{trainable_parameters, EncoderConfig, EncoderKind, ImplicitTokenMode};
use iacos::model::{Model, ModelConfig};
use iacos::synthetic;
use iacos::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::Dtype;

use common::words;

const HIDDEN: usize = 128;
const INTERMEDIATE: usize = 256;
const VOCAB: usize = 8192;
const MAX_POS: usize = 64;

/// Writes a one-layer BERT with random weights in the Hugging Face layout.
fn write_bert(dir: &Path, layers: usize) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "pizza", "was", "great", "##s", "service", "slow"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    while vocab.len() < VOCAB {
        vocab.push(format!("[unused{}]", vocab.len()));
    }
    fs::write(dir.join("vocab.txt"), vocab.join("\n") + "\n").unwrap();
    let config = serde_json::json!({
        "vocab_size": VOCAB,
        "hidden_size": HIDDEN,
        "num_hidden_layers": layers,
        "num_attention_heads": 4,
        "intermediate_size": INTERMEDIATE,
        "max_position_embeddings": MAX_POS,
        "type_vocab_size": 2,
        "layer_norm_eps": 1e-12,
        "hidden_act": "gelu",
    });
    fs::write(dir.join("config.json"), config.to_string()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tensors = BTreeMap::new();
    let mut add = |name: String, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
        tensors.insert(name, (shape, values));
    };
    add("embeddings.word_embeddings.weight".into(), vec![VOCAB, HIDDEN], &mut rng);
    add("embeddings.position_embeddings.weight".into(), vec![MAX_POS, HIDDEN], &mut rng);
    add("embeddings.token_type_embeddings.weight".into(), vec![2, HIDDEN], &mut rng);
    add("embeddings.LayerNorm.weight".into(), vec![HIDDEN], &mut rng);
    add("embeddings.LayerNorm.bias".into(), vec![HIDDEN], &mut rng);
    for i in 0..layers {
        let p = format!("encoder.layer.{i}");
        for (name, out, inp) in [
            ("attention.self.query", HIDDEN, HIDDEN),
            ("attention.self.key", HIDDEN, HIDDEN),
            ("attention.self.value", HIDDEN, HIDDEN),
            ("attention.output.dense", HIDDEN, HIDDEN),
            ("intermediate.dense", INTERMEDIATE, HIDDEN),
            ("output.dense", HIDDEN, INTERMEDIATE),
        ] {
            add(format!("{p}.{name}.weight"), vec![out, inp], &mut rng);
            add(format!("{p}.{name}.bias"), vec![out], &mut rng);
        }
        for name in ["attention.output.LayerNorm", "output.LayerNorm"] {
            add(format!("{p}.{name}.weight"), vec![HIDDEN], &mut rng);
            add(format!("{p}.{name}.bias"), vec![HIDDEN], &mut rng);
        }
    }

    let bytes: BTreeMap<&String, Vec<u8>> = tensors
        .iter()
        .map(|(k, (_, v))| (k, v.iter().flat_map(|x| x.to_le_bytes()).collect()))
        .collect();
    let views: Vec<(&String, TensorView)> = tensors
        .iter()
        .map(|(k, (shape, _))| (k, TensorView::new(Dtype::F32, shape.clone(), &bytes[k]).unwrap()))
        .collect();
    let data = safetensors::serialize(views, &None).unwrap();
    fs::write(dir.join("model.safetensors"), data).unwrap();
    tensors
}

fn bert_config(dir: &Path, mode: ImplicitTokenMode, freeze: bool) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::Pretrained,
            pretrained_id: Some(dir.to_string_lossy().into_owned()),
            implicit_token_mode: mode,
            freeze,
            ..Default::default()
        },
        head_count: 4,
        ..Default::default()
    }
}

#[test]
fn pretrained_weights_are_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let tensors = write_bert(dir.path(), 1);
    let model = Model::new(bert_config(dir.path(), ImplicitTokenMode::Dedicated, false), synthetic::vocab(), 1).unwrap();
    assert!(model.store.count_scalars("encoder.") > 1_000_000);
    assert!(trainable_parameters(&model.store).len() > 10);

    let word = model.store.by_name("encoder.embeddings.word").unwrap();
    let (shape, values) = &tensors["embeddings.word_embeddings.weight"];
    assert_eq!(word.shape(), (shape[0], shape[1]));
    assert_eq!(word.get(6, 5), f64::from(values[6 * HIDDEN + 5]));
    let q = model.store.by_name("encoder.layer0.attention.query.weight").unwrap();
    let (_, qv) = &tensors["encoder.layer.0.attention.self.query.weight"];
    assert!(q.data().iter().zip(qv).any(|(a, &b)| *a == f64::from(b)));
}

#[test]
fn rows_follow_words_with_subword_alignment() {
    let dir = tempfile::tempdir().unwrap();
    write_bert(dir.path(), 1);
    for (mode, same) in [(ImplicitTokenMode::Dedicated, false), (ImplicitTokenMode::Cls, true)] {
        let model = Model::new(bert_config(dir.path(), mode, false), synthetic::vocab(), 1).unwrap();
        let mut g = Graph::new(&model.store);
        // "pizzas" splits into two pieces but keeps one row
        let h = model.encoder.encode(&mut g, &words("the pizzas was great")).unwrap();
        let m = g.value(h);
        assert_eq!(m.shape(), (6, HIDDEN));
        assert!(m.is_finite());
        assert_eq!(m.row(4) == m.row(5), same, "{mode:?}");
    }
}

#[test]
fn frozen_encoder_exposes_no_weights() {
    let dir = tempfile::tempdir().unwrap();
    write_bert(dir.path(), 1);
    let model = Model::new(bert_config(dir.path(), ImplicitTokenMode::Dedicated, true), synthetic::vocab(), 1).unwrap();
    assert!(trainable_parameters(&model.store).is_empty());
    assert!(!model.store.trainable_ids("heads.").is_empty());
}

#[test]
fn over_length_input_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    write_bert(dir.path(), 1);
    let model = Model::new(bert_config(dir.path(), ImplicitTokenMode::Dedicated, false), synthetic::vocab(), 1).unwrap();
    let long: Vec<String> = (0..MAX_POS).map(|_| "pizza".to_owned()).collect();
    let mut g = Graph::new(&model.store);
    let err = model.encoder.encode(&mut g, &long).err().unwrap();
    assert_eq!(err.kind(), "encoder");
}

#[test]
fn missing_tensor_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_bert(dir.path(), 1);
    let mut config: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    config["num_hidden_layers"] = 2.into();
    fs::write(dir.path().join("config.json"), config.to_string()).unwrap();
    let err = Model::new(bert_config(dir.path(), ImplicitTokenMode::Dedicated, false), synthetic::vocab(), 1)
        .err()
        .unwrap();
    assert!(err.to_string().contains("missing tensor"), "{err}");
}

#[test]
fn unknown_model_id_is_an_error() {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::Pretrained,
            pretrained_id: Some("no/such-model".into()),
            ..Default::default()
        },
        ..Default::default()
    };
    let err = Model::new(cfg, synthetic::vocab(), 1).err().unwrap();
    assert_eq!(err.kind(), "encoder");
}

#[test]
fn checkpoint_carries_encoder_assets() {
    let dir = tempfile::tempdir().unwrap();
    let bert = dir.path().join("bert");
    fs::create_dir(&bert).unwrap();
    write_bert(&bert, 1);
    let model = Model::new(bert_config(&bert, ImplicitTokenMode::Dedicated, false), synthetic::vocab(), 1).unwrap();
    let ckpt = dir.path().join("ckpt");
    checkpoint::save(&model, &ckpt).unwrap();
    fs::remove_dir_all(&bert).unwrap();

    let restored = checkpoint::load(&ckpt).unwrap();
    let sentence = words("the service was slow");
    let encode = |m: &Model| {
        let mut g = Graph::new(&m.store);
        let (_, p) = m.forward_tokens(&mut g, &sentence).unwrap();
        g.value(p).clone()
    };
    assert_eq!(encode(&model), encode(&restored));
}
