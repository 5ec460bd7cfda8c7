//! Tokenization, POS tagging, and lexicon sentiment scoring.

mod lexicon;
mod pos;
mod tokenize;

pub use lexicon::{score_sentiment, LexiconError, SentimentLexicon, BUNDLED_LEXICON};
pub use pos::{tag_pos, PosTag, PosTagger, RuleTagger, UnknownTag, AUXILIARIES};
pub use tokenize::{normalize, tokenize, DETACHED_PUNCTUATION};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub pos: PosTag,
    /// Signed intensity in `[-1, 1]`; exactly `0.0` for words the lexicon lacks.
    pub sentiment: f64,
    pub index: usize,
}

fn assemble(surfaces: Vec<String>, tags: Vec<PosTag>, lexicon: &SentimentLexicon) -> Vec<Token> {
    let normalized: Vec<String> = surfaces.iter().map(|s| normalize(s)).collect();
    let scores = score_sentiment(&normalized, lexicon);
    surfaces
        .into_iter()
        .zip(normalized)
        .zip(tags)
        .zip(scores)
        .enumerate()
        .map(|(index, (((surface, normalized), pos), sentiment))| Token {
            surface,
            normalized,
            pos,
            sentiment,
            index,
        })
        .collect()
}

/// Full pipeline: tokenize, tag, score.
pub fn analyze(text: &str, tagger: &dyn PosTagger, lexicon: &SentimentLexicon) -> Vec<Token> {
    let surfaces = tokenize(text);
    let normalized: Vec<String> = surfaces.iter().map(|s| normalize(s)).collect();
    let tags = tag_pos(&normalized, tagger);
    assemble(surfaces, tags, lexicon)
}

/// Builds tokens from externally tagged `(surface, tag)` pairs.
pub fn analyze_pretagged(pairs: Vec<(String, PosTag)>, lexicon: &SentimentLexicon) -> Vec<Token> {
    let (surfaces, tags) = pairs.into_iter().unzip();
    assemble(surfaces, tags, lexicon)
}
