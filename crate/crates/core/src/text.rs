//! Shared text normalization and tokenization.
//!
//! Every component that looks at words (lexicon matching, classifier
//! features, language-model training and scoring) goes through [`tokenize`],
//! so hit counts and probabilities are comparable across detectors.

/// Bumped whenever the tokenization rule changes; recorded in report
/// metadata so downstream consumers can tell which rule produced a run.
pub const TOKENIZER_VERSION: &str = "1";

/// Lowercase the text and split it on every non-alphanumeric character,
/// discarding empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lowercase and collapse every run of whitespace/punctuation (anything
/// non-alphanumeric) into a single space, trimming the ends.
///
/// This is the canonical form used for language identification and for
/// the "document too short" length check.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Contiguous word n-grams of `tokens` for n in `lo..=hi`, joined with a
/// single space.
pub fn word_ngrams(tokens: &[String], lo: usize, hi: usize) -> Vec<String> {
    let mut grams = Vec::new();
    for n in lo..=hi.min(tokens.len()) {
        if n == 0 {
            continue;
        }
        for window in tokens.windows(n) {
            grams.push(window.join(" "));
        }
    }
    grams
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("...!?").is_empty());
    }

    #[test]
    fn tokenize_splits_on_any_non_alphanumeric() {
        assert_eq!(tokenize("a1-b2"), vec!["a1", "b2"]);
    }

    #[test]
    fn normalize_collapses_runs() {
        assert_eq!(normalize("  Foo--BAR \t baz!!"), "foo bar baz");
        assert_eq!(normalize("!!!"), "");
    }

    #[test]
    fn normalize_agrees_with_tokenize() {
        let text = "Some text, with (punctuation) and  spacing.";
        assert_eq!(tokenize(&normalize(text)), tokenize(text));
    }

    #[test]
    fn word_ngrams_windows() {
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            word_ngrams(&toks, 1, 2),
            vec!["a", "b", "c", "a b", "b c"]
        );
        assert!(word_ngrams(&[], 1, 3).is_empty());
    }
}
