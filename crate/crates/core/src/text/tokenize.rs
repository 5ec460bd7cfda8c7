/// Characters split off the edges of a whitespace-delimited word.
pub const DETACHED_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

fn is_detached(c: char) -> bool {
    DETACHED_PUNCTUATION.contains(&c)
}

/// Splits on whitespace, then peels leading and trailing punctuation marks off
/// each word as one-character tokens. Interior punctuation ("don't") stays.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let lead = chars.iter().take_while(|c| is_detached(**c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_detached(**c)).count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}

/// Lowercasing is the only normalization.
pub fn normalize(surface: &str) -> String {
    surface.to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exclamation_is_its_own_token() {
        assert_eq!(
            tokenize("I love to be ignored!"),
            vec!["I", "love", "to", "be", "ignored", "!"]
        );
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n").is_empty());
    }

    #[test]
    fn comma_and_period() {
        assert_eq!(tokenize("well, sure."), vec!["well", ",", "sure", "."]);
    }

    #[test]
    fn interior_and_repeated_marks() {
        assert_eq!(tokenize("don't"), vec!["don't"]);
        assert_eq!(tokenize("(wow!!)"), vec!["(", "wow", "!", "!", ")"]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
        assert_eq!(tokenize("\"quoted\""), vec!["\"", "quoted", "\""]);
    }

    proptest! {
        #[test]
        fn rejoin_then_retokenize_is_stable(text in "[a-zA-Z.,!?;:'\"() \t]{0,60}") {
            let toks = tokenize(&text);
            let again = tokenize(&toks.join(" "));
            prop_assert_eq!(toks, again);
        }
    }
}
