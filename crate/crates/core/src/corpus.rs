//! Data model and dataset I/O.
//!
//! Two on-disk layouts are understood:
//!
//! * the public ACOS release: one sentence per line, followed by tab-separated
//!   quadruples of the form `aspect category sentiment opinion`, where spans are
//!   `start,end` with an exclusive end and `-1,-1` marks an implicit element;
//! * the canonical JSON-lines layout produced by [`save_canonical`], with a
//!   versioned header line followed by one example per line. Spans there are
//!   inclusive word ranges, `"IA"` or `"IO"`.
//!
//! In memory every explicit span is an inclusive `[start, end]` word range.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_FORMAT: &str = "iacos-canonical";
pub const CANONICAL_VERSION: u32 = 1;

/// An aspect or opinion term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Span {
    /// Inclusive word range in the original sentence.
    Explicit { start: usize, end: usize },
    /// Aspect that does not occur in the text, represented by `[IA]`.
    ImplicitAspect,
    /// Opinion that does not occur in the text, represented by `[IO]`.
    ImplicitOpinion,
}

impl Span {
    pub fn explicit(start: usize, end: usize) -> Self {
        Span::Explicit { start, end }
    }

    pub fn is_implicit(&self) -> bool {
        !matches!(self, Span::Explicit { .. })
    }

    pub fn len(&self) -> usize {
        match *self {
            Span::Explicit { start, end } => end - start + 1,
            _ => 1,
        }
    }

    /// Rows of the token matrix covered by this span for a sentence of `n_words`.
    /// Implicit spans resolve to the two appended rows.
    pub fn rows(&self, n_words: usize) -> Vec<usize> {
        match *self {
            Span::Explicit { start, end } => (start..=end).collect(),
            Span::ImplicitAspect => vec![n_words],
            Span::ImplicitOpinion => vec![n_words + 1],
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        match (*self, *other) {
            (Span::Explicit { start: a, end: b }, Span::Explicit { start: c, end: d }) => {
                a <= d && c <= b
            }
            _ => false,
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Span::Explicit { start, end } => write!(f, "{start}..={end}"),
            Span::ImplicitAspect => f.write_str("IA"),
            Span::ImplicitOpinion => f.write_str("IO"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpanRepr {
    Range([usize; 2]),
    Marker(String),
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match *self {
            Span::Explicit { start, end } => SpanRepr::Range([start, end]),
            Span::ImplicitAspect => SpanRepr::Marker("IA".into()),
            Span::ImplicitOpinion => SpanRepr::Marker("IO".into()),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match SpanRepr::deserialize(deserializer)? {
            SpanRepr::Range([start, end]) if start <= end => Ok(Span::Explicit { start, end }),
            SpanRepr::Range([start, end]) => Err(serde::de::Error::custom(format!(
                "span start {start} after end {end}"
            ))),
            SpanRepr::Marker(m) if m == "IA" => Ok(Span::ImplicitAspect),
            SpanRepr::Marker(m) if m == "IO" => Ok(Span::ImplicitOpinion),
            SpanRepr::Marker(m) => Err(serde::de::Error::custom(format!("unknown span marker {m:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neg" | "negative" => Ok(Sentiment::Negative),
            "neu" | "neutral" => Ok(Sentiment::Neutral),
            "pos" | "positive" => Ok(Sentiment::Positive),
            _ => Err(Error::Invalid(format!("unknown sentiment {s:?}"))),
        }
    }
}

/// `(aspect, opinion, category, sentiment)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub aspect: Span,
    pub opinion: Span,
    pub category: usize,
    pub sentiment: Sentiment,
}

impl Quadruple {
    pub fn new(aspect: Span, opinion: Span, category: usize, sentiment: Sentiment) -> Self {
        Quadruple {
            aspect,
            opinion,
            category,
            sentiment,
        }
    }

    pub fn quad_type(&self) -> QuadType {
        quad_type(self)
    }

    /// Index of `(category, sentiment)` in the combination label space.
    pub fn combination(&self) -> usize {
        self.category * Sentiment::COUNT + self.sentiment.index()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuadType {
    #[serde(rename = "EA&EO")]
    EaEo,
    #[serde(rename = "IA&EO")]
    IaEo,
    #[serde(rename = "EA&IO")]
    EaIo,
    #[serde(rename = "IA&IO")]
    IaIo,
}

impl QuadType {
    pub const ALL: [QuadType; 4] = [QuadType::EaEo, QuadType::IaEo, QuadType::EaIo, QuadType::IaIo];

    pub fn as_str(self) -> &'static str {
        match self {
            QuadType::EaEo => "EA&EO",
            QuadType::IaEo => "IA&EO",
            QuadType::EaIo => "EA&IO",
            QuadType::IaIo => "IA&IO",
        }
    }
}

impl fmt::Display for QuadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn quad_type(q: &Quadruple) -> QuadType {
    match (q.aspect.is_implicit(), q.opinion.is_implicit()) {
        (false, false) => QuadType::EaEo,
        (true, false) => QuadType::IaEo,
        (false, true) => QuadType::EaIo,
        (true, true) => QuadType::IaIo,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub gold: Vec<Quadruple>,
}

impl Example {
    pub fn new(tokens: Vec<String>, gold: Vec<Quadruple>) -> Result<Self> {
        let example = Example { tokens, gold };
        example.validate()?;
        Ok(example)
    }

    pub fn from_text(text: &str, gold: Vec<Quadruple>) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_owned).collect(), gold)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Invalid("example has no tokens".into()));
        }
        let mut seen = HashSet::new();
        for q in &self.gold {
            check_span(&q.aspect, self.tokens.len(), true)?;
            check_span(&q.opinion, self.tokens.len(), false)?;
            if !seen.insert(*q) {
                return Err(Error::Invalid(format!(
                    "duplicate quadruple ({}, {}, {}, {})",
                    q.aspect,
                    q.opinion,
                    q.category,
                    q.sentiment.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Distinct gold aspect spans, in span order.
    pub fn gold_aspects(&self) -> BTreeSet<Span> {
        self.gold.iter().map(|q| q.aspect).collect()
    }

    pub fn gold_opinions(&self) -> BTreeSet<Span> {
        self.gold.iter().map(|q| q.opinion).collect()
    }
}

fn check_span(span: &Span, n_words: usize, aspect_role: bool) -> Result<()> {
    match *span {
        Span::Explicit { start, end } if start > end || end >= n_words => Err(Error::Invalid(format!(
            "span {start}..={end} outside sentence of {n_words} words"
        ))),
        Span::ImplicitOpinion if aspect_role => {
            Err(Error::Invalid("aspect cannot be an implicit opinion".into()))
        }
        Span::ImplicitAspect if !aspect_role => {
            Err(Error::Invalid("opinion cannot be an implicit aspect".into()))
        }
        _ => Ok(()),
    }
}

/// Category list plus the fixed sentiment list.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelVocab {
    categories: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new<I, S>(categories: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = LabelVocab::default();
        for c in categories {
            let c = c.into();
            if vocab.index.contains_key(&c) {
                return Err(Error::Vocab(format!("duplicate category {c:?}")));
            }
            vocab.push(c);
        }
        Ok(vocab)
    }

    fn push(&mut self, category: String) -> usize {
        let id = self.categories.len();
        self.index.insert(category.clone(), id);
        self.categories.push(category);
        id
    }

    /// Appends categories not yet present, keeping existing ids stable.
    pub fn extend_with<'a>(&mut self, categories: impl IntoIterator<Item = &'a str>) {
        for c in categories {
            if !self.index.contains_key(c) {
                self.push(c.to_owned());
            }
        }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn sentiments(&self) -> [Sentiment; 3] {
        Sentiment::ALL
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_combinations(&self) -> usize {
        self.categories.len() * Sentiment::COUNT
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn category_name(&self, id: usize) -> Option<&str> {
        self.categories.get(id).map(String::as_str)
    }

    /// Splits a combination label index into `(category, sentiment)`.
    pub fn split_combination(&self, k: usize) -> (usize, Sentiment) {
        let sentiment = Sentiment::from_index(k % Sentiment::COUNT).expect("k mod 3 is a valid sentiment");
        (k / Sentiment::COUNT, sentiment)
    }
}

/// Maps the digit in ACOS files to a sentiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentimentMap(pub [Sentiment; 3]);

impl Default for SentimentMap {
    fn default() -> Self {
        SentimentMap([Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive])
    }
}

impl SentimentMap {
    pub fn get(&self, digit: usize) -> Option<Sentiment> {
        self.0.get(digit).copied()
    }

    pub fn digit_of(&self, s: Sentiment) -> usize {
        self.0.iter().position(|&x| x == s).expect("sentiment map is a permutation")
    }
}

impl FromStr for SentimentMap {
    type Err = Error;

    /// Parses `0:neg,1:neu,2:pos`.
    fn from_str(s: &str) -> Result<Self> {
        let mut slots: [Option<Sentiment>; 3] = [None; 3];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (digit, name) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad sentiment map entry {part:?}")))?;
            let digit: usize = digit
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad sentiment digit {digit:?}")))?;
            let slot = slots
                .get_mut(digit)
                .ok_or_else(|| Error::Config(format!("sentiment digit {digit} out of range")))?;
            *slot = Some(name.trim().parse()?);
        }
        let map = match slots {
            [Some(a), Some(b), Some(c)] => [a, b, c],
            _ => return Err(Error::Config(format!("sentiment map {s:?} must cover digits 0, 1, 2"))),
        };
        let distinct: HashSet<_> = map.iter().collect();
        if distinct.len() != 3 {
            return Err(Error::Config(format!("sentiment map {s:?} is not a permutation")));
        }
        Ok(SentimentMap(map))
    }
}

#[derive(Clone, Debug)]
pub enum VocabPolicy {
    /// Collect the sorted set of categories seen in the file.
    Build,
    /// Use an existing vocabulary; unknown categories are load errors.
    Given(LabelVocab),
}

struct RawQuad {
    aspect: Span,
    opinion: Span,
    category: String,
    sentiment: Sentiment,
}

fn parse_acos_span(field: &str, n_words: usize, implicit: Span) -> std::result::Result<Span, String> {
    let (a, b) = field
        .split_once(',')
        .ok_or_else(|| format!("span {field:?} is not start,end"))?;
    let a: i64 = a.trim().parse().map_err(|_| format!("bad span start in {field:?}"))?;
    let b: i64 = b.trim().parse().map_err(|_| format!("bad span end in {field:?}"))?;
    if a == -1 && b == -1 {
        return Ok(implicit);
    }
    if a < 0 || b <= a || b as usize > n_words {
        return Err(format!("span {field:?} out of bounds for {n_words} words"));
    }
    Ok(Span::explicit(a as usize, b as usize - 1))
}

fn parse_acos_line(line: &str, map: &SentimentMap) -> std::result::Result<(Vec<String>, Vec<RawQuad>), String> {
    let mut fields = line.split('\t');
    let sentence = fields.next().unwrap_or_default();
    let tokens: Vec<String> = sentence.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err("empty sentence".into());
    }
    let mut quads = Vec::new();
    for field in fields {
        if field.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = field.split_whitespace().collect();
        let [aspect, category, sentiment, opinion] = parts[..] else {
            return Err(format!("quadruple {field:?} must have 4 fields"));
        };
        let digit: usize = sentiment
            .parse()
            .map_err(|_| format!("bad sentiment digit {sentiment:?}"))?;
        let sentiment = map
            .get(digit)
            .ok_or_else(|| format!("sentiment digit {digit} out of range"))?;
        quads.push(RawQuad {
            aspect: parse_acos_span(aspect, tokens.len(), Span::ImplicitAspect)?,
            opinion: parse_acos_span(opinion, tokens.len(), Span::ImplicitOpinion)?,
            category: category.to_owned(),
            sentiment,
        });
    }
    Ok((tokens, quads))
}

/// Reads a file in the public ACOS TSV layout.
pub fn import_acos_tsv(
    path: impl AsRef<Path>,
    policy: VocabPolicy,
    map: &SentimentMap,
) -> Result<(Vec<Example>, LabelVocab)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let load_err = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_acos_line(line, map).map_err(|m| load_err(i + 1, m))?;
        raw.push((i + 1, parsed));
    }

    let vocab = match policy {
        VocabPolicy::Given(v) => v,
        VocabPolicy::Build => {
            let names: BTreeSet<&str> = raw
                .iter()
                .flat_map(|(_, (_, qs))| qs.iter().map(|q| q.category.as_str()))
                .collect();
            LabelVocab::new(names)?
        }
    };

    let mut examples = Vec::with_capacity(raw.len());
    for (line, (tokens, quads)) in raw {
        let mut gold = Vec::with_capacity(quads.len());
        for q in quads {
            let category = vocab
                .category_id(&q.category)
                .ok_or_else(|| load_err(line, format!("unknown category {:?}", q.category)))?;
            gold.push(Quadruple::new(q.aspect, q.opinion, category, q.sentiment));
        }
        let example = Example::new(tokens, gold).map_err(|e| load_err(line, e.to_string()))?;
        examples.push(example);
    }
    Ok((examples, vocab))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalHeader {
    format: String,
    version: u32,
    categories: Vec<String>,
    sentiments: Vec<Sentiment>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalQuad {
    aspect: Span,
    opinion: Span,
    category: String,
    sentiment: Sentiment,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalExample {
    tokens: Vec<String>,
    quads: Vec<CanonicalQuad>,
}

pub fn save_canonical(examples: &[Example], vocab: &LabelVocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = CanonicalHeader {
        format: CANONICAL_FORMAT.into(),
        version: CANONICAL_VERSION,
        categories: vocab.categories().to_vec(),
        sentiments: Sentiment::ALL.to_vec(),
    };
    let write = |out: &mut BufWriter<fs::File>, line: String| {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };
    write(&mut out, serde_json::to_string(&header)?)?;
    for ex in examples {
        let quads = ex
            .gold
            .iter()
            .map(|q| {
                let category = vocab
                    .category_name(q.category)
                    .ok_or_else(|| Error::Vocab(format!("category id {} not in vocabulary", q.category)))?;
                Ok(CanonicalQuad {
                    aspect: q.aspect,
                    opinion: q.opinion,
                    category: category.to_owned(),
                    sentiment: q.sentiment,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = CanonicalExample {
            tokens: ex.tokens.clone(),
            quads,
        };
        write(&mut out, serde_json::to_string(&record)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<(Vec<Example>, LabelVocab)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let load_err = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: missing header", path.display())))?;
    let header: CanonicalHeader = serde_json::from_str(header)
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    if header.format != CANONICAL_FORMAT || header.version != CANONICAL_VERSION {
        return Err(Error::Schema(format!(
            "{}: expected {CANONICAL_FORMAT} v{CANONICAL_VERSION}, found {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    if header.sentiments != Sentiment::ALL {
        return Err(Error::Schema(format!("{}: unexpected sentiment list", path.display())));
    }
    let vocab = LabelVocab::new(header.categories)?;

    let mut examples = Vec::new();
    for (i, line) in lines {
        let record: CanonicalExample =
            serde_json::from_str(line).map_err(|e| load_err(i + 1, e.to_string()))?;
        let gold = record
            .quads
            .into_iter()
            .map(|q| {
                let category = vocab
                    .category_id(&q.category)
                    .ok_or_else(|| load_err(i + 1, format!("unknown category {:?}", q.category)))?;
                Ok(Quadruple::new(q.aspect, q.opinion, category, q.sentiment))
            })
            .collect::<Result<Vec<_>>>()?;
        let example = Example::new(record.tokens, gold).map_err(|e| load_err(i + 1, e.to_string()))?;
        examples.push(example);
    }
    Ok((examples, vocab))
}

/// Re-expresses examples labelled with `from` in terms of `to`.
pub fn remap_categories(examples: &[Example], from: &LabelVocab, to: &LabelVocab) -> Result<Vec<Example>> {
    examples
        .iter()
        .map(|ex| {
            let gold = ex
                .gold
                .iter()
                .map(|q| {
                    let name = from
                        .category_name(q.category)
                        .ok_or_else(|| Error::Vocab(format!("category id {} unknown", q.category)))?;
                    let category = to
                        .category_id(name)
                        .ok_or_else(|| Error::Vocab(format!("category {name:?} missing from target vocabulary")))?;
                    Ok(Quadruple { category, ..*q })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                tokens: ex.tokens.clone(),
                gold,
            })
        })
        .collect()
}

/// Dataset statistics in the shape of the usual benchmark table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub sentences: usize,
    pub quadruples: usize,
    pub by_type: BTreeMap<QuadType, usize>,
    pub categories: usize,
}

pub fn census(examples: &[Example]) -> Census {
    let mut by_type: BTreeMap<QuadType, usize> = QuadType::ALL.iter().map(|&t| (t, 0)).collect();
    let mut categories = BTreeSet::new();
    let mut quadruples = 0;
    for q in examples.iter().flat_map(|e| &e.gold) {
        *by_type.get_mut(&q.quad_type()).unwrap() += 1;
        categories.insert(q.category);
        quadruples += 1;
    }
    Census {
        sentences: examples.len(),
        quadruples,
        by_type,
        categories: categories.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn imports_implicit_aspect_line() {
        let f = write_tmp("nice place !\t-1,-1 RESTAURANT#GENERAL 2 0,1\n");
        let (examples, vocab) = import_acos_tsv(f.path(), VocabPolicy::Build, &SentimentMap::default()).unwrap();
        assert_eq!(examples.len(), 1);
        let q = examples[0].gold[0];
        assert_eq!(q.aspect, Span::ImplicitAspect);
        assert_eq!(q.opinion, Span::explicit(0, 0));
        assert_eq!(vocab.category_name(q.category), Some("RESTAURANT#GENERAL"));
        assert_eq!(q.sentiment, Sentiment::Positive);
    }

    #[test]
    fn load_errors_name_the_line() {
        let f = write_tmp("good food\t0,1 FOOD#QUALITY 2 1,2\nbad line\t0,1 FOOD 2\n");
        let err = import_acos_tsv(f.path(), VocabPolicy::Build, &SentimentMap::default()).unwrap_err();
        match err {
            Error::Load { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let f = write_tmp("good food\t0,3 FOOD#QUALITY 2 1,2\n");
        assert!(matches!(
            import_acos_tsv(f.path(), VocabPolicy::Build, &SentimentMap::default()),
            Err(Error::Load { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_category_under_given_vocab() {
        let f = write_tmp("good food\t0,1 FOOD#QUALITY 2 1,2\n");
        let vocab = LabelVocab::new(["SERVICE#GENERAL"]).unwrap();
        assert!(import_acos_tsv(f.path(), VocabPolicy::Given(vocab), &SentimentMap::default()).is_err());
    }

    #[test]
    fn duplicate_quadruples_rejected() {
        let f = write_tmp("good food\t0,1 FOOD#QUALITY 2 1,2\t0,1 FOOD#QUALITY 2 1,2\n");
        assert!(import_acos_tsv(f.path(), VocabPolicy::Build, &SentimentMap::default()).is_err());
    }

    #[test]
    fn sentiment_map_parsing() {
        let m: SentimentMap = "0:pos,1:neu,2:neg".parse().unwrap();
        assert_eq!(m.get(0), Some(Sentiment::Positive));
        assert_eq!(m.digit_of(Sentiment::Negative), 2);
        assert!("0:pos,1:pos,2:neg".parse::<SentimentMap>().is_err());
        assert!("0:pos,1:neu".parse::<SentimentMap>().is_err());
    }

    #[test]
    fn quad_types() {
        let e = Span::explicit(0, 0);
        let t = |a, o| quad_type(&Quadruple::new(a, o, 0, Sentiment::Neutral));
        assert_eq!(t(e, e), QuadType::EaEo);
        assert_eq!(t(Span::ImplicitAspect, e), QuadType::IaEo);
        assert_eq!(t(e, Span::ImplicitOpinion), QuadType::EaIo);
        assert_eq!(t(Span::ImplicitAspect, Span::ImplicitOpinion), QuadType::IaIo);
    }

    #[test]
    fn role_crossing_spans_rejected() {
        let q = Quadruple::new(Span::ImplicitOpinion, Span::explicit(0, 0), 0, Sentiment::Neutral);
        assert!(Example::from_text("a b", vec![q]).is_err());
    }

    #[test]
    fn canonical_empty_file_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let vocab = LabelVocab::new(["A"]).unwrap();
        save_canonical(&[], &vocab, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (examples, loaded) = load_canonical(&path).unwrap();
        assert!(examples.is_empty());
        assert_eq!(loaded, vocab);
    }

    #[test]
    fn canonical_version_mismatch() {
        let f = write_tmp(
            "{\"format\":\"iacos-canonical\",\"version\":99,\"categories\":[],\"sentiments\":[\"negative\",\"neutral\",\"positive\"]}\n",
        );
        assert!(matches!(load_canonical(f.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn census_partitions_quadruples() {
        let f = write_tmp(concat!(
            "the food is great\t0,2 FOOD#QUALITY 2 3,4\t-1,-1 RESTAURANT#GENERAL 2 3,4\n",
            "never again\t-1,-1 RESTAURANT#GENERAL 0 -1,-1\t0,1 SERVICE#GENERAL 0 -1,-1\n",
        ));
        let (examples, _) = import_acos_tsv(f.path(), VocabPolicy::Build, &SentimentMap::default()).unwrap();
        let c = census(&examples);
        assert_eq!(c.sentences, 2);
        assert_eq!(c.quadruples, 4);
        assert_eq!(c.by_type.values().sum::<usize>(), 4);
        assert_eq!(c.by_type[&QuadType::IaIo], 1);
        assert_eq!(c.categories, 3);
    }
}
