//! Behavior-chunk segmentation.
//!
//! A sentence is cut into fixed-width windows that contain at least one verb or
//! auxiliary ("core"). Duplicate spans are dropped, then for every core the
//! `⌈w/2⌉` windows with the largest unsigned sentiment mass are kept. The
//! union of those picks, in textual order, is the chunk sequence fed to the
//! behavior channel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Tensor;
use crate::text::Token;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("token id {id} out of range for embedding table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("chunk span [{start}, {end}) exceeds sentence of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_size: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { window_size: 4 }
    }
}

impl SegmentationConfig {
    pub fn new(window_size: usize) -> Result<Self, SegmentError> {
        if window_size == 0 {
            return Err(SegmentError::ZeroWindow);
        }
        Ok(Self { window_size })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorChunk {
    /// First token index.
    pub start: usize,
    /// One past the last token index.
    pub end: usize,
    /// Core word this chunk was kept for. For a fallback chunk this is `0`.
    pub core_index: usize,
    /// Σ |sentiment| over the span.
    pub intensity: f64,
    /// Whole-sentence chunk emitted for a sentence without verbs/auxiliaries.
    pub fallback: bool,
}

impl BehaviorChunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

fn span_intensity(tokens: &[Token], start: usize, end: usize) -> f64 {
    tokens[start..end].iter().map(|t| t.sentiment.abs()).sum()
}

/// Indices of VERB/AUX tokens, ascending.
pub fn find_cores(tokens: &[Token]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.pos.is_core())
        .map(|(i, _)| i)
        .collect()
}

/// `⌈window_size / 2⌉`.
pub fn top_n(config: &SegmentationConfig) -> usize {
    config.window_size.div_ceil(2)
}

/// Every width-`w` window holding at least one core, by start index. A
/// sentence shorter than the window becomes one whole-sentence window.
pub fn slide_windows(tokens: &[Token], cores: &[usize], config: &SegmentationConfig) -> Vec<BehaviorChunk> {
    let len = tokens.len();
    let w = config.window_size;
    if cores.is_empty() || len == 0 {
        return Vec::new();
    }
    let make = |start: usize, end: usize| {
        cores
            .iter()
            .find(|&&c| (start..end).contains(&c))
            .map(|&core_index| BehaviorChunk {
                start,
                end,
                core_index,
                intensity: span_intensity(tokens, start, end),
                fallback: false,
            })
    };
    if len <= w {
        return make(0, len).into_iter().collect();
    }
    (0..=len - w).filter_map(|s| make(s, s + w)).collect()
}

/// Deduplicates candidates, keeps the `top_n` most intense per core (ties to
/// the smaller start), and returns the union ordered by start then core.
pub fn select_chunks(
    candidates: &[BehaviorChunk],
    tokens: &[Token],
    config: &SegmentationConfig,
) -> Vec<BehaviorChunk> {
    let mut unique: Vec<&BehaviorChunk> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !unique.iter().any(|u| u.span() == c.span()) {
            unique.push(c);
        }
    }

    let n = top_n(config);
    let mut chosen: Vec<BehaviorChunk> = Vec::new();
    for core in find_cores(tokens) {
        let mut holding: Vec<&BehaviorChunk> = unique.iter().copied().filter(|c| c.contains(core)).collect();
        holding.sort_by(|a, b| b.intensity.total_cmp(&a.intensity).then(a.start.cmp(&b.start)));
        chosen.extend(holding.into_iter().take(n).map(|c| BehaviorChunk {
            core_index: core,
            ..c.clone()
        }));
    }

    chosen.sort_by_key(|c| (c.start, c.core_index));
    let mut out: Vec<BehaviorChunk> = Vec::with_capacity(chosen.len());
    for c in chosen {
        if out.last().map(BehaviorChunk::span) != Some(c.span()) && !out.iter().any(|o| o.span() == c.span()) {
            out.push(c);
        }
    }
    out
}

/// Result of running the whole segmentation on one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub chunks: Vec<BehaviorChunk>,
    /// No verb or auxiliary was found; `chunks` holds one whole-sentence chunk.
    pub fallback: bool,
}

/// find_cores → slide_windows → select_chunks, with the verb-free fallback.
/// An empty sentence yields no chunks.
pub fn segment(tokens: &[Token], config: &SegmentationConfig) -> Segmentation {
    let cores = find_cores(tokens);
    if cores.is_empty() {
        let chunks = if tokens.is_empty() {
            Vec::new()
        } else {
            vec![BehaviorChunk {
                start: 0,
                end: tokens.len(),
                core_index: 0,
                intensity: span_intensity(tokens, 0, tokens.len()),
                fallback: true,
            }]
        };
        return Segmentation { chunks, fallback: true };
    }
    let candidates = slide_windows(tokens, &cores, config);
    Segmentation {
        chunks: select_chunks(&candidates, tokens, config),
        fallback: false,
    }
}

/// Elementwise sum of the embedding rows of the chunk's tokens.
///
/// `sentence_ids` are the vocabulary ids of the whole sentence; the chunk's
/// span selects from them.
pub fn behavior_embed(chunk: &BehaviorChunk, sentence_ids: &[usize], table: &Tensor) -> Result<Vec<f64>, SegmentError> {
    if chunk.end > sentence_ids.len() {
        return Err(SegmentError::SpanOutOfRange {
            start: chunk.start,
            end: chunk.end,
            len: sentence_ids.len(),
        });
    }
    let (rows, cols) = table.dims2().unwrap_or((0, 0));
    let mut out = vec![0.0; cols];
    for &id in &sentence_ids[chunk.start..chunk.end] {
        if id >= rows {
            return Err(SegmentError::IdOutOfRange { id, rows });
        }
        for (o, v) in out.iter_mut().zip(table.row(id)) {
            *o += v;
        }
    }
    Ok(out)
}
