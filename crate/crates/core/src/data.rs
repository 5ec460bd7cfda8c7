//! Corpus ingestion, vocabulary, embeddings, cached preprocessing, batching.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layers::PAD_ID;
use crate::model::{Labels, ModelInput};
use crate::numeric::Tensor;
use crate::reconstruct::{derive_labels, has_lexical_conflict, split, Polarity, SentenceSplit, SubtaskLabels};
use crate::segment::{segment, BehaviorChunk, SegmentationConfig};
use crate::text::{analyze, analyze_pretagged, normalize, PosTag, PosTagger, SentimentLexicon, Token};

pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 150;
pub const CACHE_VERSION: u32 = 1;

/// Synthetic 64-example corpus: sarcastic lines pair a positive verb with a
/// negative verb phrase.
pub const SMOKE_CORPUS: &str = include_str!("../data/smoke.tsv");

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}:{line}: label {label:?} is not 0 or 1")]
    Label { path: String, line: usize, label: String },
    #[error("{path}: no examples")]
    Empty { path: String },
    #[error("embedding file {path} has dimension {found}, the model expects {expected}")]
    Dimension {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("cache {path} is unreadable: {reason}")]
    Cache { path: String, reason: String },
    #[error("invalid segmentation config: {0}")]
    Segment(#[from] crate::segment::SegmentError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Text column layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// Raw text, tagged by the configured tagger.
    Plain,
    /// Whitespace-separated `word/TAG` pairs.
    Pretagged,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "tsv" => Ok(CorpusFormat::Plain),
            "pretagged" => Ok(CorpusFormat::Pretagged),
            other => Err(format!("unknown corpus format {other:?} (expected plain|pretagged)")),
        }
    }
}

impl CorpusFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusFormat::Plain => "plain",
            CorpusFormat::Pretagged => "pretagged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub sarcastic: bool,
    /// Externally supplied subtask labels, used instead of derived ones.
    pub subtasks: Option<SubtaskLabels>,
    /// Present for pre-tagged corpora.
    pub tagged: Option<Vec<(String, PosTag)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn sarcastic_count(&self) -> usize {
        self.examples.iter().filter(|e| e.sarcastic).count()
    }
}

fn parse_polarity(s: &str) -> Option<Polarity> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "pos" | "positive" => Some(Polarity::Positive),
        "0" | "neg" | "negative" => Some(Polarity::Negative),
        _ => None,
    }
}

/// Parses `label<TAB>text`, optionally followed by `<TAB>explicit<TAB>implicit`
/// sentiment labels (`pos|neg|1|0`). Blank lines and `#` lines are skipped.
pub fn parse_corpus(content: &str, name: &str, format: CorpusFormat, split: Split) -> Result<Corpus, DataError> {
    let mut examples = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| DataError::Malformed {
            path: name.to_string(),
            line,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 && fields.len() != 4 {
            return Err(malformed(
                "expected \"label<TAB>text\" with optional explicit and implicit labels",
            ));
        }
        let sarcastic = match fields[0].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(DataError::Label {
                    path: name.to_string(),
                    line,
                    label: other.to_string(),
                })
            }
        };
        let text = fields[1].trim().to_string();
        if text.is_empty() {
            return Err(malformed("empty text"));
        }
        let subtasks = if fields.len() == 4 {
            let e = parse_polarity(fields[2]).ok_or_else(|| malformed("explicit label must be pos|neg|1|0"))?;
            let m = parse_polarity(fields[3]).ok_or_else(|| malformed("implicit label must be pos|neg|1|0"))?;
            Some(SubtaskLabels {
                explicit_label: e,
                implicit_label: m,
            })
        } else {
            None
        };
        let tagged = match format {
            CorpusFormat::Plain => None,
            CorpusFormat::Pretagged => {
                let pairs = text
                    .split_whitespace()
                    .map(|item| {
                        let (word, tag) = item
                            .rsplit_once('/')
                            .ok_or_else(|| malformed(&format!("token {item:?} is not word/TAG")))?;
                        let tag = tag.parse::<PosTag>().map_err(|e| malformed(&e.to_string()))?;
                        if word.is_empty() {
                            return Err(malformed(&format!("token {item:?} has an empty word")));
                        }
                        Ok((word.to_string(), tag))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(pairs)
            }
        };
        examples.push(Example {
            text,
            sarcastic,
            subtasks,
            tagged,
        });
    }
    if examples.is_empty() {
        return Err(DataError::Empty { path: name.to_string() });
    }
    Ok(Corpus {
        name: name.to_string(),
        split,
        examples,
    })
}

pub fn load_corpus(path: &Path, format: CorpusFormat, split: Split) -> Result<Corpus, DataError> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(&content, &path.display().to_string(), format, split)
}

/// Word ids over normalized forms. Each word remembers the first surface
/// form seen, for embedding lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    surfaces: Vec<String>,
    index: HashMap<String, usize>,
    pub min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
    surfaces: Vec<String>,
    min_freq: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.words, r.surfaces, r.min_freq)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            words: v.words,
            surfaces: v.surfaces,
            min_freq: v.min_freq,
        }
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, surfaces: Vec<String>, min_freq: usize) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            surfaces,
            index,
            min_freq,
        }
    }

    /// Words with frequency `≥ min_freq` get ids in first-occurrence order.
    pub fn build<'a, I>(sentences: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [Token]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<(&str, &str)> = Vec::new();
        for tokens in sentences {
            for t in tokens {
                let c = counts.entry(t.normalized.as_str()).or_insert(0);
                if *c == 0 {
                    order.push((t.normalized.as_str(), t.surface.as_str()));
                }
                *c += 1;
            }
        }
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut surfaces = words.clone();
        for (w, s) in order {
            if counts[w] >= min_freq.max(1) && w != PAD_TOKEN && w != UNK_TOKEN {
                words.push(w.to_string());
                surfaces.push(s.to_string());
            }
        }
        Self::from_parts(words, surfaces, min_freq)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, normalized: &str) -> usize {
        self.index.get(normalized).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.index.contains_key(normalized)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn surface(&self, id: usize) -> Option<&str> {
        self.surfaces.get(id).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Reads word2vec text vectors into a `|V| × dim` table. Rows are looked up
/// by surface form, then by normalized form; words absent from the file get
/// `U(−0.05, 0.05)` rows and the padding row is zero.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<(Tensor, usize), DataError> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_embeddings(&content, &path.display().to_string(), vocab, dim, seed)
}

/// See [`load_embeddings`]; also returns how many vocabulary rows were found.
pub fn parse_embeddings(
    content: &str,
    name: &str,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(Tensor, usize), DataError> {
    let malformed = |line: usize, reason: String| DataError::Malformed {
        path: name.to_string(),
        line,
        reason,
    };
    let mut lines = content.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| malformed(1, "missing \"count dim\" header".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (Some(_count), Some(file_dim), 2) = (
        parts.first().and_then(|s| s.parse::<usize>().ok()),
        parts.get(1).and_then(|s| s.parse::<usize>().ok()),
        parts.len(),
    ) else {
        return Err(malformed(1, format!("header {header:?} is not \"count dim\"")));
    };
    if file_dim != dim {
        return Err(DataError::Dimension {
            path: name.to_string(),
            expected: dim,
            found: file_dim,
        });
    }
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, l) in lines {
        let mut it = l.split_whitespace();
        let Some(word) = it.next() else { continue };
        let values = it
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| malformed(i + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(malformed(i + 1, format!("expected {dim} values, got {}", values.len())));
        }
        vectors.insert(word.to_string(), values);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut found = 0;
    for id in 0..vocab.len() {
        if id == PAD_ID {
            data.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        let surface = vocab.surface(id).unwrap_or_default();
        let word = vocab.word(id).unwrap_or_default();
        let hit = vectors.get(surface).or_else(|| vectors.get(word));
        match hit {
            Some(v) => {
                found += 1;
                data.extend_from_slice(v);
            }
            None => data.extend((0..dim).map(|_| rng.gen_range(-0.05..=0.05))),
        }
    }
    let table = Tensor::new(vec![vocab.len(), dim], data).expect("length matches shape");
    Ok((table, found))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window_size: usize,
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window_size: 4,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedExample {
    pub tokens: Vec<Token>,
    pub token_ids: Vec<usize>,
    pub chunks: Vec<BehaviorChunk>,
    pub chunk_spans: Vec<(usize, usize)>,
    /// No verb or auxiliary in the sentence.
    pub fallback: bool,
    pub split: SentenceSplit,
    pub labels: Labels,
    /// The text was longer than `max_len` tokens.
    pub truncated: bool,
}

impl PreprocessedExample {
    pub fn model_input(&self) -> ModelInput<'_> {
        ModelInput {
            token_ids: &self.token_ids,
            chunks: &self.chunk_spans,
            explicit: &self.split.explicit_ids,
            implicit: &self.split.implicit_ids,
        }
    }

    pub fn sarcastic(&self) -> bool {
        self.labels.sarcastic
    }
}

/// One example through tokenization, tagging, scoring, segmentation and
/// splitting.
pub fn preprocess_example(
    example: &Example,
    vocab: &Vocabulary,
    config: &PreprocessConfig,
    lexicon: &SentimentLexicon,
    tagger: &dyn PosTagger,
) -> Result<PreprocessedExample, DataError> {
    let seg_config = SegmentationConfig::new(config.window_size)?;
    let mut tokens = match &example.tagged {
        Some(pairs) => analyze_pretagged(pairs.clone(), lexicon),
        None => analyze(&example.text, tagger, lexicon),
    };
    let truncated = tokens.len() > config.max_len;
    if truncated {
        log::warn!(
            "text of {} tokens truncated to {}: {:.40}",
            tokens.len(),
            config.max_len,
            example.text
        );
        tokens.truncate(config.max_len);
    }
    let token_ids = tokens.iter().map(|t| vocab.id(&t.normalized)).collect();
    let seg = segment(&tokens, &seg_config);
    let sentence_split = split(&tokens);
    let subtasks = example
        .subtasks
        .unwrap_or_else(|| derive_labels(&sentence_split, example.sarcastic));
    Ok(PreprocessedExample {
        chunk_spans: seg.chunks.iter().map(BehaviorChunk::span).collect(),
        chunks: seg.chunks,
        fallback: seg.fallback,
        tokens,
        token_ids,
        split: sentence_split,
        labels: Labels {
            sarcastic: example.sarcastic,
            subtasks,
        },
        truncated,
    })
}

pub fn preprocess_corpus(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &PreprocessConfig,
    lexicon: &SentimentLexicon,
    tagger: &dyn PosTagger,
) -> Result<Vec<PreprocessedExample>, DataError> {
    corpus
        .examples
        .iter()
        .map(|e| preprocess_example(e, vocab, config, lexicon, tagger))
        .collect()
}

/// Fraction of sarcastic examples with no token of the polarity opposite to
/// the surface polarity. `0.0` when there are no sarcastic examples.
pub fn conflict_free_ratio(examples: &[PreprocessedExample]) -> f64 {
    let sarcastic: Vec<&PreprocessedExample> = examples.iter().filter(|e| e.sarcastic()).collect();
    if sarcastic.is_empty() {
        return 0.0;
    }
    let free = sarcastic
        .iter()
        .filter(|e| !has_lexical_conflict(&e.tokens, &e.split))
        .count();
    free as f64 / sarcastic.len() as f64
}

/// Everything needed to train and evaluate, produced from the raw splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub config: PreprocessConfig,
    pub train: Vec<PreprocessedExample>,
    pub valid: Vec<PreprocessedExample>,
    pub test: Vec<PreprocessedExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub examples: usize,
    pub sarcastic: usize,
    pub fallback: usize,
    pub truncated: usize,
    pub conflict_free_ratio: f64,
}

impl Dataset {
    /// Vocabulary comes from `train` only.
    pub fn build(
        train: &Corpus,
        valid: Option<&Corpus>,
        test: Option<&Corpus>,
        config: &PreprocessConfig,
        min_freq: usize,
        lexicon: &SentimentLexicon,
        tagger: &dyn PosTagger,
    ) -> Result<Self, DataError> {
        let bootstrap = Vocabulary::build(std::iter::empty(), 1);
        let train_tokens = preprocess_corpus(train, &bootstrap, config, lexicon, tagger)?;
        let vocab = Vocabulary::build(train_tokens.iter().map(|e| e.tokens.as_slice()), min_freq);
        let run = |c: Option<&Corpus>| match c {
            Some(c) => preprocess_corpus(c, &vocab, config, lexicon, tagger),
            None => Ok(Vec::new()),
        };
        Ok(Self {
            train: run(Some(train))?,
            valid: run(valid)?,
            test: run(test)?,
            vocab,
            config: config.clone(),
        })
    }

    pub fn split(&self, split: Split) -> &[PreprocessedExample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// The same examples re-segmented with another window size.
    pub fn with_window(&self, window_size: usize) -> Result<Self, DataError> {
        let seg_config = SegmentationConfig::new(window_size)?;
        let resegment = |examples: &[PreprocessedExample]| {
            examples
                .iter()
                .map(|e| {
                    let seg = segment(&e.tokens, &seg_config);
                    PreprocessedExample {
                        chunk_spans: seg.chunks.iter().map(BehaviorChunk::span).collect(),
                        chunks: seg.chunks,
                        fallback: seg.fallback,
                        ..e.clone()
                    }
                })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            vocab: self.vocab.clone(),
            config: PreprocessConfig {
                window_size,
                ..self.config.clone()
            },
            train: resegment(&self.train),
            valid: resegment(&self.valid),
            test: resegment(&self.test),
        })
    }

    pub fn stats(&self, split: Split) -> SplitStats {
        let ex = self.split(split);
        SplitStats {
            examples: ex.len(),
            sarcastic: ex.iter().filter(|e| e.sarcastic()).count(),
            fallback: ex.iter().filter(|e| e.fallback).count(),
            truncated: ex.iter().filter(|e| e.truncated).count(),
            conflict_free_ratio: conflict_free_ratio(ex),
        }
    }
}

/// All inputs that determine a [`Dataset`]. Stored inside the cache file and
/// compared in full on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub train: Corpus,
    pub valid: Option<Corpus>,
    pub test: Option<Corpus>,
    pub config: PreprocessConfig,
    pub min_freq: usize,
    pub lexicon: Vec<(String, f64)>,
    pub tagger_version: String,
}

impl CacheKey {
    pub fn new(
        train: &Corpus,
        valid: Option<&Corpus>,
        test: Option<&Corpus>,
        config: &PreprocessConfig,
        min_freq: usize,
        lexicon: &SentimentLexicon,
        tagger: &dyn PosTagger,
    ) -> Self {
        Self {
            train: train.clone(),
            valid: valid.cloned(),
            test: test.cloned(),
            config: config.clone(),
            min_freq,
            lexicon: lexicon
                .sorted_entries()
                .into_iter()
                .map(|(w, v)| (w.to_string(), v))
                .collect(),
            tagger_version: tagger.version().to_string(),
        }
    }

    pub fn digest(&self) -> String {
        let bytes = bincode::serialize(self).expect("cache key serializes");
        crate::to_hex(&Sha256::digest(&bytes))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    key: CacheKey,
    dataset: Dataset,
}

/// Whether [`load_or_build`] reused a cache file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

pub fn cache_path(dir: &Path, key: &CacheKey) -> PathBuf {
    dir.join(format!("preprocessed-{}.bin", key.digest()))
}

/// Reads a cached dataset for `key`, or builds and writes one atomically.
/// A file whose stored key differs from `key` is rebuilt.
pub fn load_or_build(
    dir: &Path,
    key: &CacheKey,
    lexicon: &SentimentLexicon,
    tagger: &dyn PosTagger,
) -> Result<(Dataset, PathBuf, CacheStatus), DataError> {
    let path = cache_path(dir, key);
    if path.exists() {
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        match bincode::deserialize::<CacheFile>(&bytes) {
            Ok(file) if file.version == CACHE_VERSION && &file.key == key => {
                return Ok((file.dataset, path, CacheStatus::Hit));
            }
            Ok(_) => log::warn!("cache {} does not match its inputs; rebuilding", path.display()),
            Err(e) => log::warn!("cache {} unreadable ({e}); rebuilding", path.display()),
        }
    }
    let dataset = Dataset::build(
        &key.train,
        key.valid.as_ref(),
        key.test.as_ref(),
        &key.config,
        key.min_freq,
        lexicon,
        tagger,
    )?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file = CacheFile {
        version: CACHE_VERSION,
        key: key.clone(),
        dataset,
    };
    let bytes = bincode::serialize(&file).map_err(|e| DataError::Cache {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(&bytes).map_err(io_err(&path))?;
    tmp.persist(&path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok((file.dataset, path, CacheStatus::Miss))
}

/// Padded view of a group of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub token_ids: Vec<Vec<usize>>,
    pub token_mask: Vec<Vec<bool>>,
    /// Chunk spans padded with `(0, 0)`.
    pub chunk_spans: Vec<Vec<(usize, usize)>>,
    pub chunk_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Splits `examples` into batches of `batch_size` (the last may be shorter).
/// With a seed the order is shuffled deterministically.
pub fn batch(examples: &[PreprocessedExample], batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|idx| {
            let max_tokens = idx.iter().map(|&i| examples[i].token_ids.len()).max().unwrap_or(0);
            let max_chunks = idx.iter().map(|&i| examples[i].chunk_spans.len()).max().unwrap_or(0);
            let pad = |len: usize, max: usize| (0..max).map(|j| j < len).collect::<Vec<bool>>();
            Batch {
                indices: idx.to_vec(),
                token_ids: idx
                    .iter()
                    .map(|&i| {
                        let mut v = examples[i].token_ids.clone();
                        v.resize(max_tokens, PAD_ID);
                        v
                    })
                    .collect(),
                token_mask: idx
                    .iter()
                    .map(|&i| pad(examples[i].token_ids.len(), max_tokens))
                    .collect(),
                chunk_spans: idx
                    .iter()
                    .map(|&i| {
                        let mut v = examples[i].chunk_spans.clone();
                        v.resize(max_chunks, (0, 0));
                        v
                    })
                    .collect(),
                chunk_mask: idx
                    .iter()
                    .map(|&i| pad(examples[i].chunk_spans.len(), max_chunks))
                    .collect(),
            }
        })
        .collect()
}

/// Normalized token list of a raw text, for vocabulary checks.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    crate::text::tokenize(text).iter().map(|t| normalize(t)).collect()
}
