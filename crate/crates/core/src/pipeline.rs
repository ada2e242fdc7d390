//! Text to quadruples with a trained model.
//!
//! Prediction files are JSON lines. The first line is a header
//! `{"format":"iacos-predictions","version":1,"categories":[...]}`; each
//! following line is one sentence:
//!
//! ```json
//! {"tokens":["great","pizza"],"quads":[{"aspect":[1,1],"opinion":[0,0],
//!   "category":"FOOD#QUALITY","sentiment":"positive","confidence":0.97}]}
//! ```
//!
//! Spans are inclusive word ranges or `"IA"` / `"IO"`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_canonical, Example, LabelVocab, Quadruple, Sentiment, Span, CANONICAL_FORMAT};
use crate::error::{Error, Result};
use crate::heads::{predict_tags, DECISION_THRESHOLD};
use crate::model::Model;
use crate::tagseq::decode_tags;
use crate::tensor::Graph;

pub const PREDICTIONS_FORMAT: &str = "iacos-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

/// Quadruples predicted for one sentence, each with the probability of its
/// combination label. Sorted and free of duplicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub quadruples: Vec<(Quadruple, f64)>,
}

impl Prediction {
    pub fn quads(&self) -> Vec<Quadruple> {
        self.quadruples.iter().map(|(q, _)| *q).collect()
    }

    pub fn len(&self) -> usize {
        self.quadruples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadruples.is_empty()
    }
}

/// Tags the sentence, decodes aspect and opinion candidates (always including
/// the implicit ones), scores every candidate pair and keeps each combination
/// label whose probability is strictly above 0.5.
pub fn extract_quadruples(model: &Model, words: &[String]) -> Result<Prediction> {
    let mut g = Graph::new(&model.store);
    let (h, p) = model.forward_tokens(&mut g, words)?;
    let tags = predict_tags(g.value(p));
    let (aspects, opinions) = decode_tags(&tags);
    let width = model.vocab.num_combinations();

    let mut found = BTreeMap::new();
    for &a in &aspects {
        for &o in &opinions {
            let pooled = model.heads.pool_pair(&mut g, h, a, o)?;
            let probs = model.heads.pair_probs(&mut g, pooled);
            let probs = g.value(probs).data();
            if probs.len() != width {
                return Err(Error::Vocab(format!(
                    "classifier has {} outputs but vocabulary has {width} combinations",
                    probs.len()
                )));
            }
            for (k, &prob) in probs.iter().enumerate() {
                if prob > DECISION_THRESHOLD {
                    let (category, sentiment) = model.vocab.split_combination(k);
                    found.insert(Quadruple::new(a, o, category, sentiment), prob);
                }
            }
        }
    }
    Ok(Prediction {
        quadruples: found.into_iter().collect(),
    })
}

/// Predictions for every example, in order.
pub fn predict_examples(model: &Model, examples: &[Example]) -> Result<Vec<Prediction>> {
    examples.iter().map(|ex| extract_quadruples(model, &ex.tokens)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordQuad {
    aspect: Span,
    opinion: Span,
    category: String,
    sentiment: Sentiment,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<String>,
    quads: Vec<RecordQuad>,
}

/// One sentence read back from a prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSentence {
    pub tokens: Vec<String>,
    pub prediction: Prediction,
}

/// Reads sentences from a canonical corpus file or from plain text with one
/// whitespace-tokenised sentence per line.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let canonical = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .and_then(|v| v.get("format").and_then(|f| f.as_str()).map(|f| f == CANONICAL_FORMAT))
        .unwrap_or(false);
    if canonical {
        let (examples, _) = load_canonical(path)?;
        return Ok(examples.into_iter().map(|e| e.tokens).collect());
    }
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .filter(|t| !t.is_empty())
        .collect())
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    vocab: &LabelVocab,
    sentences: &[(Vec<String>, Prediction)],
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format: PREDICTIONS_FORMAT.into(),
        version: PREDICTIONS_VERSION,
        categories: vocab.categories().to_vec(),
    };
    let mut lines = vec![serde_json::to_string(&header)?];
    for (tokens, pred) in sentences {
        let quads = pred
            .quadruples
            .iter()
            .map(|(q, confidence)| {
                Ok(RecordQuad {
                    aspect: q.aspect,
                    opinion: q.opinion,
                    category: vocab
                        .category_name(q.category)
                        .ok_or_else(|| Error::Vocab(format!("category id {} not in vocabulary", q.category)))?
                        .to_owned(),
                    sentiment: q.sentiment,
                    confidence: *confidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        lines.push(serde_json::to_string(&Record {
            tokens: tokens.clone(),
            quads,
        })?);
    }
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Runs the model over `input` and writes a prediction file. Returns the
/// number of sentences written.
pub fn predict_file(model: &Model, input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<usize> {
    let sentences = read_sentences(input)?;
    let predicted = sentences
        .into_iter()
        .map(|words| {
            let pred = extract_quadruples(model, &words)?;
            Ok((words, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    write_predictions(output, &model.vocab, &predicted)?;
    Ok(predicted.len())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Vec<PredictedSentence>, LabelVocab)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: missing header", path.display())))?;
    let header: Header = serde_json::from_str(header)
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    if header.format != PREDICTIONS_FORMAT || header.version != PREDICTIONS_VERSION {
        return Err(Error::Schema(format!(
            "{}: expected {PREDICTIONS_FORMAT} v{PREDICTIONS_VERSION}, found {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let vocab = LabelVocab::new(header.categories)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        let load_err = |message: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| load_err(e.to_string()))?;
        let mut quadruples = record
            .quads
            .into_iter()
            .map(|q| {
                let category = vocab
                    .category_id(&q.category)
                    .ok_or_else(|| load_err(format!("unknown category {:?}", q.category)))?;
                Ok((Quadruple::new(q.aspect, q.opinion, category, q.sentiment), q.confidence))
            })
            .collect::<Result<Vec<_>>>()?;
        quadruples.sort_by(|a, b| a.0.cmp(&b.0));
        out.push(PredictedSentence {
            tokens: record.tokens,
            prediction: Prediction { quadruples },
        });
    }
    Ok((out, vocab))
}
