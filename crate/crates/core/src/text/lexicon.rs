use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: expected \"word<TAB>value\", got {content:?}")]
    Malformed { line: usize, content: String },
    #[error("lexicon line {line}: value {value} outside [-1, 1]")]
    OutOfRange { line: usize, value: f64 },
}

/// Word → signed polarity intensity in `[-1, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    entries: HashMap<String, f64>,
}

pub const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.tsv");

impl SentimentLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The small lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    /// Parses `word<TAB>value` lines; `#` lines and blank lines are skipped,
    /// and a repeated word keeps its last value.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let malformed = || LexiconError::Malformed {
                line,
                content: trimmed.to_string(),
            };
            let (word, value) = trimmed.split_once('\t').ok_or_else(malformed)?;
            let word = word.trim();
            if word.is_empty() {
                return Err(malformed());
            }
            let value: f64 = value.trim().parse().map_err(|_| malformed())?;
            if !(-1.0..=1.0).contains(&value) {
                return Err(LexiconError::OutOfRange { line, value });
            }
            entries.insert(word.to_lowercase(), value);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Inserts or replaces one entry. Panics if `value` is outside `[-1, 1]`.
    pub fn insert(&mut self, word: &str, value: f64) {
        assert!((-1.0..=1.0).contains(&value), "polarity {value} out of range");
        self.entries.insert(word.to_lowercase(), value);
    }

    /// `None` for words the lexicon does not know.
    pub fn get(&self, normalized: &str) -> Option<f64> {
        self.entries.get(normalized).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by word.
    pub fn sorted_entries(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Order-independent content digest.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (w, v) in self.sorted_entries() {
            h.update(w.as_bytes());
            h.update([0]);
            h.update(v.to_bits().to_le_bytes());
        }
        crate::to_hex(&h.finalize())
    }
}

/// Signed polarity per token, `0.0` for unknown words.
pub fn score_sentiment(tokens: &[String], lexicon: &SentimentLexicon) -> Vec<f64> {
    tokens.iter().map(|t| lexicon.get(t).unwrap_or(0.0)).collect()
}
