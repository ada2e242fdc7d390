//! Greedy longest-match WordPiece over a BERT `vocab.txt`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub struct WordPiece {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    lowercase: bool,
    max_chars: usize,
}

impl WordPiece {
    pub fn from_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tokens(text.lines().map(str::to_owned).collect(), lowercase))
    }

    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Self {
        let vocab = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        WordPiece {
            vocab,
            tokens,
            lowercase,
            max_chars: 100,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    fn special(&self, token: &str) -> Result<usize> {
        self.id(token)
            .ok_or_else(|| Error::Encoder(format!("vocabulary lacks {token}")))
    }

    pub fn cls_id(&self) -> Result<usize> {
        self.special("[CLS]")
    }

    pub fn sep_id(&self) -> Result<usize> {
        self.special("[SEP]")
    }

    pub fn unk_id(&self) -> Result<usize> {
        self.special("[UNK]")
    }

    /// Word pieces of one pre-tokenised word; never empty.
    pub fn word_ids(&self, word: &str) -> Result<Vec<usize>> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_owned()
        };
        let mut ids = Vec::new();
        for piece in split_punctuation(&word) {
            ids.extend(self.wordpiece(piece)?);
        }
        if ids.is_empty() {
            ids.push(self.unk_id()?);
        }
        Ok(ids)
    }

    fn wordpiece(&self, piece: &str) -> Result<Vec<usize>> {
        let chars: Vec<char> = piece.chars().collect();
        if chars.len() > self.max_chars {
            return Ok(vec![self.unk_id()?]);
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, "##");
                }
                if let Some(id) = self.id(&sub) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => return Ok(vec![self.unk_id()?]),
            }
        }
        Ok(out)
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

fn split_punctuation(word: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, c) in word.char_indices() {
        if c.is_whitespace() || c.is_control() {
            if start < i {
                parts.push(&word[start..i]);
            }
            start = i + c.len_utf8();
        } else if is_punctuation(c) {
            if start < i {
                parts.push(&word[start..i]);
            }
            parts.push(&word[i..i + c.len_utf8()]);
            start = i + c.len_utf8();
        }
    }
    if start < word.len() {
        parts.push(&word[start..]);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> WordPiece {
        let tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "the", "pizza", "un", "##believ", "##able", "!", "good"];
        WordPiece::from_tokens(tokens.iter().map(|s| s.to_string()).collect(), true)
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab();
        assert_eq!(v.word_ids("Unbelievable").unwrap(), vec![6, 7, 8]);
        assert_eq!(v.word_ids("pizza").unwrap(), vec![5]);
    }

    #[test]
    fn punctuation_is_split_and_unknowns_map_to_unk() {
        let v = vocab();
        assert_eq!(v.word_ids("good!").unwrap(), vec![10, 9]);
        assert_eq!(v.word_ids("xyz").unwrap(), vec![1]);
        assert_eq!(v.word_ids("\u{7}").unwrap(), vec![1]);
    }
}
