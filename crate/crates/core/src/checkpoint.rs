//! Checkpoint directories.
//!
//! ```text
//! manifest.json        format, version, model config, categories, config hash,
//!                      and one {name, shape, file} entry per tensor
//! tensors/NNNN.bin     raw little-endian f64, row-major
//! encoder/             tokenizer and config files of a pretrained encoder
//! ```
//!
//! Loading rebuilds the model from the manifest and checks every tensor
//! against the shape that model expects.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LabelVocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "iacos-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub categories: Vec<String>,
    pub num_combinations: usize,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// SHA-256 over the JSON of the model config and category list.
pub fn config_hash(model: &ModelConfig, categories: &[String]) -> Result<String> {
    let json = serde_json::to_vec(&(model, categories))?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let encoder_dir = dir.join("encoder");
    fs::create_dir_all(&encoder_dir).map_err(|e| Error::io(&encoder_dir, e))?;
    model.encoder.save_assets(&encoder_dir)?;

    let mut tensors = Vec::with_capacity(model.store.len());
    for (i, (_, param)) in model.store.iter().enumerate() {
        let file = format!("tensors/{i:04}.bin");
        let bytes: Vec<u8> = param.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&dir.join(&file), &bytes)?;
        let (r, c) = param.value.shape();
        tensors.push(TensorEntry {
            name: param.name.clone(),
            shape: [r, c],
            file,
        });
    }
    let categories = model.vocab.categories().to_vec();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash(&model.config, &categories)?,
        model: model.config.clone(),
        num_combinations: model.vocab.num_combinations(),
        categories,
        tensors,
    };
    write(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
            path.display(),
            manifest.format,
            manifest.version
        )));
    }
    if manifest.config_hash != config_hash(&manifest.model, &manifest.categories)? {
        return Err(Error::Checkpoint(format!("{}: config hash mismatch", path.display())));
    }
    Ok(manifest)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let vocab = LabelVocab::new(manifest.categories.iter().map(String::as_str))?;
    if vocab.num_combinations() != manifest.num_combinations {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} combinations for {} categories",
            manifest.num_combinations,
            vocab.num_categories()
        )));
    }
    let mut model = Model::build(manifest.model.clone(), vocab, 0, Some(&dir.join("encoder")), false)?;

    let mut entries: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_owned();
        let entry = entries
            .remove(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let target = model.store.get_mut(id);
        if entry.shape != [target.rows(), target.cols()] {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored shape {:?}, model expects {:?}",
                entry.shape,
                target.shape()
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != target.len() * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: {} bytes for {} values",
                path.display(),
                bytes.len(),
                target.len()
            )));
        }
        for (v, chunk) in target.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    model.store.set_trainable("", true);
    if model.config.encoder.freeze {
        model.store.set_trainable(crate::encoder::PARAM_PREFIX, false);
    }
    Ok(model)
}
