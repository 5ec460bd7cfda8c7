//! Explicit/implicit sentence splitting.
//!
//! The surface polarity of a sentence is whichever of the summed positive and
//! summed negative lexicon intensities is larger. Tokens agreeing with it form
//! the explicit sentence; everything else, neutrals and punctuation included,
//! forms the implicit sentence.

use serde::{Deserialize, Serialize};

use crate::text::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    /// Class index for a 2-way head: negative = 0, positive = 1.
    pub fn class(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_class(class: usize) -> Option<Self> {
        match class {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    fn matches(self, sentiment: f64) -> bool {
        match self {
            Polarity::Positive => sentiment > 0.0,
            Polarity::Negative => sentiment < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceSplit {
    pub surface_polarity: Polarity,
    pub explicit_ids: Vec<usize>,
    pub implicit_ids: Vec<usize>,
    /// The sentence has no sentiment-bearing token at all.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskLabels {
    pub explicit_label: Polarity,
    pub implicit_label: Polarity,
}

/// Positive when the positive mass is at least the negative mass. The flag is
/// set when both masses are zero.
pub fn surface_polarity(tokens: &[Token]) -> (Polarity, bool) {
    let positive: f64 = tokens.iter().filter(|t| t.sentiment > 0.0).map(|t| t.sentiment).sum();
    let negative: f64 = tokens
        .iter()
        .filter(|t| t.sentiment < 0.0)
        .map(|t| t.sentiment.abs())
        .sum();
    let degenerate = positive == 0.0 && negative == 0.0;
    let polarity = if positive >= negative {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    (polarity, degenerate)
}

pub fn split(tokens: &[Token]) -> SentenceSplit {
    let (surface, degenerate) = surface_polarity(tokens);
    let (explicit_ids, implicit_ids) = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, !degenerate && surface.matches(t.sentiment)))
        .fold((Vec::new(), Vec::new()), |(mut e, mut m), (i, is_explicit)| {
            if is_explicit {
                e.push(i);
            } else {
                m.push(i);
            }
            (e, m)
        });
    SentenceSplit {
        surface_polarity: surface,
        explicit_ids,
        implicit_ids,
        degenerate,
    }
}

/// Explicit label is the surface polarity; the implicit label is flipped for
/// sarcastic text.
pub fn derive_labels(split: &SentenceSplit, sarcastic: bool) -> SubtaskLabels {
    let explicit_label = split.surface_polarity;
    SubtaskLabels {
        explicit_label,
        implicit_label: if sarcastic {
            explicit_label.flipped()
        } else {
            explicit_label
        },
    }
}

/// A sarcastic text shows no lexical conflict when none of its tokens carries
/// the polarity opposite to the surface polarity.
pub fn has_lexical_conflict(tokens: &[Token], split: &SentenceSplit) -> bool {
    let opposite = split.surface_polarity.flipped();
    split
        .implicit_ids
        .iter()
        .any(|&i| opposite.matches(tokens[i].sentiment))
}
