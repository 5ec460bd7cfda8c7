use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The 17 universal part-of-speech tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 17] = [
        PosTag::Adj,
        PosTag::Adp,
        PosTag::Adv,
        PosTag::Aux,
        PosTag::Cconj,
        PosTag::Det,
        PosTag::Intj,
        PosTag::Noun,
        PosTag::Num,
        PosTag::Part,
        PosTag::Pron,
        PosTag::Propn,
        PosTag::Punct,
        PosTag::Sconj,
        PosTag::Sym,
        PosTag::Verb,
        PosTag::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adj => "ADJ",
            PosTag::Adp => "ADP",
            PosTag::Adv => "ADV",
            PosTag::Aux => "AUX",
            PosTag::Cconj => "CCONJ",
            PosTag::Det => "DET",
            PosTag::Intj => "INTJ",
            PosTag::Noun => "NOUN",
            PosTag::Num => "NUM",
            PosTag::Part => "PART",
            PosTag::Pron => "PRON",
            PosTag::Propn => "PROPN",
            PosTag::Punct => "PUNCT",
            PosTag::Sconj => "SCONJ",
            PosTag::Sym => "SYM",
            PosTag::Verb => "VERB",
            PosTag::X => "X",
        }
    }

    /// Verbs and auxiliaries anchor behavior chunks.
    pub fn is_core(self) -> bool {
        matches!(self, PosTag::Verb | PosTag::Aux)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownTag(pub String);

impl fmt::Display for UnknownTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown POS tag {:?}", self.0)
    }
}

impl std::error::Error for UnknownTag {}

impl FromStr for PosTag {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == upper)
            .ok_or_else(|| UnknownTag(s.to_string()))
    }
}

/// Maps normalized tokens to tags, one per token.
pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag>;

    /// Identifies the tagger's behavior for cache keys.
    fn version(&self) -> &str;
}

/// Tags `tokens` with `tagger`, checking the length contract.
pub fn tag_pos(tokens: &[String], tagger: &dyn PosTagger) -> Vec<PosTag> {
    let tags = tagger.tag(tokens);
    assert_eq!(
        tags.len(),
        tokens.len(),
        "tagger {} returned {} tags for {} tokens",
        tagger.version(),
        tags.len(),
        tokens.len()
    );
    tags
}

pub const AUXILIARIES: &[&str] = &[
    "be", "am", "is", "are", "was", "were", "been", "being", "do", "does", "did", "have", "has", "had", "will",
    "would", "can", "could", "shall", "should", "may", "might", "must",
];

const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "myself",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "it",
    "its",
    "itself",
    "we",
    "us",
    "our",
    "ours",
    "ourselves",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
    "who",
    "whom",
    "whose",
    "what",
    "which",
    "someone",
    "anyone",
    "everyone",
    "nobody",
    "somebody",
    "anybody",
    "everybody",
    "something",
    "anything",
    "everything",
    "nothing",
    "u",
];
const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "every", "each", "some", "any", "no", "all", "both", "another",
    "either", "neither",
];
const ADPOSITIONS: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "from", "up", "down", "off", "over", "under", "around", "among", "across", "behind",
    "beyond", "near", "since", "until", "upon", "within", "without", "toward", "towards",
];
const COORDINATORS: &[&str] = &["and", "or", "but", "nor", "yet"];
const SUBORDINATORS: &[&str] = &[
    "if", "because", "although", "though", "while", "whereas", "unless", "whether", "as", "than",
];
const PARTICLES: &[&str] = &["to", "not", "n't", "'s", "nt"];
const INTERJECTIONS: &[&str] = &[
    "oh", "wow", "yay", "ugh", "lol", "yeah", "hey", "ah", "haha", "oops", "hmm", "ok", "okay", "yes", "please", "omg",
    "duh", "meh", "yep", "nope",
];
const ADVERBS: &[&str] = &[
    "just",
    "really",
    "so",
    "very",
    "always",
    "never",
    "again",
    "too",
    "also",
    "still",
    "even",
    "already",
    "here",
    "there",
    "now",
    "then",
    "often",
    "sometimes",
    "soon",
    "quite",
    "almost",
    "ever",
    "totally",
    "how",
    "when",
    "where",
    "why",
    "only",
    "well",
    "more",
    "most",
    "much",
];
const ADJECTIVES: &[&str] = &[
    "good",
    "great",
    "bad",
    "happy",
    "sad",
    "awful",
    "terrible",
    "horrible",
    "nice",
    "best",
    "worst",
    "new",
    "old",
    "big",
    "small",
    "long",
    "short",
    "late",
    "early",
    "fresh",
    "warm",
    "cold",
    "hot",
    "quiet",
    "sunny",
    "sick",
    "tired",
    "angry",
    "glad",
    "fun",
    "perfect",
    "amazing",
    "awesome",
    "wonderful",
    "fantastic",
    "excellent",
    "stupid",
    "wrong",
    "free",
    "kind",
    "alone",
    "boring",
    "annoying",
    "delicious",
    "relaxing",
];
const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "hundred", "thousand",
    "million",
];

const VERB_LIST: &str = include_str!("../../data/verbs.txt");

/// Deterministic closed-class + verb-list + suffix-rule tagger.
///
/// Lookup order: punctuation/symbols/numbers, auxiliaries, closed classes,
/// the bundled verb list (with regular inflections), the adjective and adverb
/// lists, then suffix rules. Anything left is a NOUN.
#[derive(Debug, Clone)]
pub struct RuleTagger {
    verbs: HashSet<String>,
}

impl Default for RuleTagger {
    fn default() -> Self {
        Self::new()
    }
}

fn in_list(list: &[&str], w: &str) -> bool {
    list.contains(&w)
}

impl RuleTagger {
    pub const VERSION: &'static str = "rule-tagger-1";

    pub fn new() -> Self {
        let verbs = VERB_LIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self { verbs }
    }

    fn is_listed_verb(&self, w: &str) -> bool {
        if self.verbs.contains(w) {
            return true;
        }
        let mut bases: Vec<String> = Vec::new();
        if let Some(stem) = w.strip_suffix("ing") {
            bases.push(stem.to_string());
            bases.push(format!("{stem}e"));
            bases.push(undouble(stem));
        }
        if let Some(stem) = w.strip_suffix("ed") {
            bases.push(stem.to_string());
            bases.push(format!("{stem}e"));
            bases.push(undouble(stem));
        }
        if let Some(stem) = w.strip_suffix("ied") {
            bases.push(format!("{stem}y"));
        }
        if let Some(stem) = w.strip_suffix("ies") {
            bases.push(format!("{stem}y"));
        }
        if let Some(stem) = w.strip_suffix("es") {
            bases.push(stem.to_string());
        }
        if let Some(stem) = w.strip_suffix('s') {
            bases.push(stem.to_string());
        }
        bases.iter().any(|b| !b.is_empty() && self.verbs.contains(b))
    }

    pub fn tag_word(&self, w: &str) -> PosTag {
        if w.is_empty() {
            return PosTag::X;
        }
        if w.chars().all(|c| c.is_ascii_punctuation() && !is_symbol(c)) {
            return PosTag::Punct;
        }
        if w.chars().all(is_symbol) {
            return PosTag::Sym;
        }
        if w.starts_with('@') {
            return PosTag::Propn;
        }
        if w.starts_with('#') || w.starts_with("http") {
            return PosTag::X;
        }
        if w.parse::<f64>().is_ok() || in_list(NUMBER_WORDS, w) {
            return PosTag::Num;
        }
        if in_list(AUXILIARIES, w) {
            return PosTag::Aux;
        }
        if in_list(PRONOUNS, w) {
            return PosTag::Pron;
        }
        if in_list(DETERMINERS, w) {
            return PosTag::Det;
        }
        if in_list(PARTICLES, w) {
            return PosTag::Part;
        }
        if in_list(ADPOSITIONS, w) {
            return PosTag::Adp;
        }
        if in_list(COORDINATORS, w) {
            return PosTag::Cconj;
        }
        if in_list(SUBORDINATORS, w) {
            return PosTag::Sconj;
        }
        if in_list(INTERJECTIONS, w) {
            return PosTag::Intj;
        }
        if in_list(ADJECTIVES, w) {
            return PosTag::Adj;
        }
        if in_list(ADVERBS, w) {
            return PosTag::Adv;
        }
        if self.is_listed_verb(w) {
            return PosTag::Verb;
        }
        let long = w.chars().count() > 4;
        if long && w.ends_with("ly") {
            return PosTag::Adv;
        }
        if long && (w.ends_with("ing") || w.ends_with("ed")) {
            return PosTag::Verb;
        }
        if long
            && ["ous", "ful", "ive", "able", "ible", "less", "ish", "ic"]
                .iter()
                .any(|s| w.ends_with(s))
        {
            return PosTag::Adj;
        }
        PosTag::Noun
    }
}

fn is_symbol(c: char) -> bool {
    matches!(
        c,
        '$' | '%' | '&' | '*' | '+' | '<' | '=' | '>' | '^' | '|' | '~' | '/' | '\\'
    )
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
        stem[..stem.len() - 1].to_string()
    } else {
        stem.to_string()
    }
}

impl PosTagger for RuleTagger {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        tokens.iter().map(|t| self.tag_word(t)).collect()
    }

    fn version(&self) -> &str {
        Self::VERSION
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn figure_sentence_tags() {
        let t = RuleTagger::new();
        let tags = tag_pos(&strings(&["i", "love", "to", "be", "ignored", "!"]), &t);
        use PosTag::*;
        assert_eq!(tags, vec![Pron, Verb, Part, Aux, Verb, Punct]);
    }

    #[test]
    fn single_aux_and_empty() {
        let t = RuleTagger::new();
        assert_eq!(tag_pos(&strings(&["be"]), &t), vec![PosTag::Aux]);
        assert!(tag_pos(&[], &t).is_empty());
    }

    #[test]
    fn every_auxiliary_is_aux() {
        let t = RuleTagger::new();
        for a in AUXILIARIES {
            assert_eq!(t.tag_word(a), PosTag::Aux, "{a}");
        }
    }

    #[test]
    fn unknown_word_is_noun() {
        let t = RuleTagger::new();
        assert_eq!(t.tag_word("zorblax"), PosTag::Noun);
        assert_eq!(t.tag_word("quickly"), PosTag::Adv);
        assert_eq!(t.tag_word("waiting"), PosTag::Verb);
        assert_eq!(t.tag_word("hated"), PosTag::Verb);
        assert_eq!(t.tag_word("stopped"), PosTag::Verb);
        assert_eq!(t.tag_word("tries"), PosTag::Verb);
        assert_eq!(t.tag_word("42"), PosTag::Num);
        assert_eq!(t.tag_word("$"), PosTag::Sym);
    }

    #[test]
    fn tag_names_round_trip() {
        for t in PosTag::ALL {
            assert_eq!(t.as_str().parse::<PosTag>().unwrap(), t);
        }
        assert!("VRB".parse::<PosTag>().is_err());
    }

    proptest! {
        #[test]
        fn aux_only_for_closed_class(words in proptest::collection::vec("[a-z']{1,9}", 0..12)) {
            let t = RuleTagger::new();
            let tags = tag_pos(&words, &t);
            prop_assert_eq!(tags.len(), words.len());
            for (w, tag) in words.iter().zip(&tags) {
                if *tag == PosTag::Aux {
                    prop_assert!(AUXILIARIES.contains(&w.as_str()));
                }
            }
            prop_assert_eq!(tag_pos(&words, &t), tags);
        }
    }
}
