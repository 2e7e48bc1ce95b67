//! Lexicon phrase counting: load phrase lists, compile them into one
//! multi-pattern automaton, count per-document occurrences, apply flag
//! thresholds.
//!
//! Matching is at token boundaries over the shared tokenization: a pattern
//! is a sequence of 1..=5 tokens and matches contiguous token runs only.
//! Every occurrence counts by default; [`CountingMode::Distinct`] counts
//! distinct matched patterns instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::Path;

use aho_corasick::AhoCorasick;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::tokenize;

/// Longest allowed pattern, in tokens.
pub const MAX_PATTERN_TOKENS: usize = 5;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon `{0}` has no patterns")]
    EmptyLexicon(String),
    #[error("lexicon `{name}` line {line}: {reason}")]
    BadPattern {
        name: String,
        line: usize,
        reason: String,
    },
    #[error("unknown lexicon `{0}`")]
    UnknownLexicon(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// How occurrences are aggregated into a document's hit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountingMode {
    /// Total matched occurrences (two occurrences of one pattern count 2).
    #[default]
    Total,
    /// Distinct patterns with at least one occurrence.
    Distinct,
}

impl CountingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountingMode::Total => "total",
            CountingMode::Distinct => "distinct",
        }
    }
}

/// A named phrase list: unique, non-empty token sequences.
#[derive(Debug, Clone)]
pub struct Lexicon {
    name: String,
    patterns: Vec<Vec<String>>,
    duplicates_dropped: usize,
    source_sha256: Option<String>,
}

impl Lexicon {
    /// Build from raw phrases, normalizing each through the shared
    /// tokenizer. Duplicates are dropped (and counted), not errors.
    pub fn from_phrases<I, S>(name: &str, phrases: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut patterns = Vec::new();
        let mut seen = HashSet::new();
        let mut duplicates = 0;
        for (i, phrase) in phrases.into_iter().enumerate() {
            let tokens = tokenize(phrase.as_ref());
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() > MAX_PATTERN_TOKENS {
                return Err(LexiconError::BadPattern {
                    name: name.to_string(),
                    line: i + 1,
                    reason: format!(
                        "pattern has {} tokens; limit is {MAX_PATTERN_TOKENS}",
                        tokens.len()
                    ),
                });
            }
            if seen.insert(tokens.join(" ")) {
                patterns.push(tokens);
            } else {
                duplicates += 1;
            }
        }
        if patterns.is_empty() {
            return Err(LexiconError::EmptyLexicon(name.to_string()));
        }
        Ok(Lexicon {
            name: name.to_string(),
            patterns,
            duplicates_dropped: duplicates,
            source_sha256: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn patterns(&self) -> &[Vec<String>] {
        &self.patterns
    }

    /// Duplicate lines dropped during load; surfaced as a warning count in
    /// run metadata.
    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// SHA-256 of the source file, when loaded from one.
    pub fn source_sha256(&self) -> Option<&str> {
        self.source_sha256.as_deref()
    }
}

/// Load a lexicon file: one phrase per line, `#` comments and blank lines
/// ignored, lowercased with inner whitespace collapsed.
pub fn load_lexicon(path: &Path, name: &str) -> Result<Lexicon, LexiconError> {
    let raw = std::fs::read_to_string(path)?;
    let digest = format!("{:x}", Sha256::digest(raw.as_bytes()));
    let phrases = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut lexicon = Lexicon::from_phrases(name, phrases)?;
    lexicon.source_sha256 = Some(digest);
    Ok(lexicon)
}

/// Per-lexicon hit counts for one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HitCounts {
    counts: BTreeMap<String, u64>,
}

impl HitCounts {
    pub fn get(&self, lexicon: &str) -> Option<u64> {
        self.counts.get(lexicon).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn into_map(self) -> BTreeMap<String, u64> {
        self.counts
    }
}

/// True iff the lexicon's count reaches `threshold`.
pub fn flag(counts: &HitCounts, lexicon: &str, threshold: u64) -> Result<bool, LexiconError> {
    counts
        .get(lexicon)
        .map(|c| c >= threshold)
        .ok_or_else(|| LexiconError::UnknownLexicon(lexicon.to_string()))
}

/// Compiled multi-pattern automaton over all lexicons.
///
/// Patterns are matched inside the space-joined token stream with sentinel
/// spaces on both ends, so a pattern can only match whole tokens. Overlapping
/// matches are enumerated so every occurrence of every pattern counts.
pub struct Matcher {
    automaton: AhoCorasick,
    /// For each automaton pattern, the lexicons containing it.
    pattern_owners: Vec<Vec<u32>>,
    lexicon_names: Vec<String>,
}

/// Compile lexicons into a [`Matcher`].
pub fn compile(lexicons: &[Lexicon]) -> Result<Matcher, LexiconError> {
    if lexicons.is_empty() {
        return Err(LexiconError::EmptyLexicon("<none>".to_string()));
    }
    // Deduplicate pattern strings across lexicons; each keeps its own count.
    let mut keys: Vec<String> = Vec::new();
    let mut owners: Vec<Vec<u32>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (lex_idx, lexicon) in lexicons.iter().enumerate() {
        for pattern in &lexicon.patterns {
            let key = format!(" {} ", pattern.join(" "));
            let slot = *index.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                owners.push(Vec::new());
                keys.len() - 1
            });
            owners[slot].push(lex_idx as u32);
        }
    }
    let automaton = AhoCorasick::new(&keys).expect("patterns are non-empty");
    Ok(Matcher {
        automaton,
        pattern_owners: owners,
        lexicon_names: lexicons.iter().map(|l| l.name.clone()).collect(),
    })
}

impl Matcher {
    pub fn lexicon_names(&self) -> &[String] {
        &self.lexicon_names
    }

    /// Count hits in raw text (tokenized here). Total-occurrence mode.
    pub fn count_hits(&self, text: &str) -> HitCounts {
        self.count_hits_with(text, CountingMode::Total)
    }

    pub fn count_hits_with(&self, text: &str, mode: CountingMode) -> HitCounts {
        self.count_tokens(&tokenize(text), mode)
    }

    /// Count hits in an already-tokenized document.
    pub fn count_tokens(&self, tokens: &[String], mode: CountingMode) -> HitCounts {
        let mut totals = vec![0u64; self.lexicon_names.len()];
        if !tokens.is_empty() {
            let mut haystack = String::with_capacity(tokens.iter().map(|t| t.len() + 1).sum());
            haystack.push(' ');
            for token in tokens {
                haystack.push_str(token);
                haystack.push(' ');
            }
            match mode {
                CountingMode::Total => {
                    for m in self.automaton.find_overlapping_iter(&haystack) {
                        for &owner in &self.pattern_owners[m.pattern().as_usize()] {
                            totals[owner as usize] += 1;
                        }
                    }
                }
                CountingMode::Distinct => {
                    let mut matched: HashSet<usize> = HashSet::new();
                    for m in self.automaton.find_overlapping_iter(&haystack) {
                        matched.insert(m.pattern().as_usize());
                    }
                    for pattern in matched {
                        for &owner in &self.pattern_owners[pattern] {
                            totals[owner as usize] += 1;
                        }
                    }
                }
            }
        }
        HitCounts {
            counts: self
                .lexicon_names
                .iter()
                .cloned()
                .zip(totals)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon(name: &str, phrases: &[&str]) -> Lexicon {
        Lexicon::from_phrases(name, phrases.iter().copied()).unwrap()
    }

    #[test]
    fn from_phrases_dedups_and_normalizes() {
        let lex = lexicon("demo", &["foo", "foo", "bar baz"]);
        assert_eq!(lex.patterns().len(), 2);
        assert_eq!(lex.duplicates_dropped(), 1);

        let lex = lexicon("demo", &["FOO  Bar"]);
        assert_eq!(lex.patterns(), &[vec!["foo".to_string(), "bar".to_string()]]);
    }

    #[test]
    fn empty_lexicon_rejected() {
        assert!(matches!(
            Lexicon::from_phrases("demo", Vec::<&str>::new()),
            Err(LexiconError::EmptyLexicon(_))
        ));
        // Lines that normalize to nothing do not count as patterns.
        assert!(matches!(
            Lexicon::from_phrases("demo", ["!!!", "..."]),
            Err(LexiconError::EmptyLexicon(_))
        ));
    }

    #[test]
    fn oversized_pattern_rejected() {
        assert!(matches!(
            Lexicon::from_phrases("demo", ["a b c d e f"]),
            Err(LexiconError::BadPattern { .. })
        ));
    }

    #[test]
    fn load_lexicon_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.txt");
        std::fs::write(&path, "# comment\nfoo\nfoo\nbar baz\n\n").unwrap();
        let lex = load_lexicon(&path, "demo").unwrap();
        assert_eq!(lex.patterns().len(), 2);
        assert_eq!(lex.duplicates_dropped(), 1);
        assert!(lex.source_sha256().is_some());

        std::fs::write(&path, "# only comments\n# here\n").unwrap();
        assert!(matches!(
            load_lexicon(&path, "demo"),
            Err(LexiconError::EmptyLexicon(_))
        ));
    }

    #[test]
    fn single_pattern_counts_occurrences() {
        let matcher = compile(&[lexicon("l", &["x"])]).unwrap();
        assert_eq!(matcher.count_hits("x y x").get("l"), Some(2));
    }

    #[test]
    fn shared_pattern_counts_per_lexicon() {
        let matcher = compile(&[
            lexicon("a", &["shared", "only a"]),
            lexicon("b", &["shared"]),
        ])
        .unwrap();
        let counts = matcher.count_hits("shared only a shared");
        assert_eq!(counts.get("a"), Some(3));
        assert_eq!(counts.get("b"), Some(2));
    }

    #[test]
    fn empty_text_counts_zero() {
        let matcher = compile(&[lexicon("l", &["x", "y z"])]).unwrap();
        let counts = matcher.count_hits("");
        assert_eq!(counts.get("l"), Some(0));
    }

    #[test]
    fn multi_token_pattern() {
        let matcher = compile(&[lexicon("l", &["bad word"])]).unwrap();
        assert_eq!(
            matcher.count_hits("a bad word is a bad word").get("l"),
            Some(2)
        );
    }

    #[test]
    fn token_boundary_not_substring() {
        let matcher = compile(&[lexicon("l", &["ab"])]).unwrap();
        assert_eq!(matcher.count_hits("slab").get("l"), Some(0));
        assert_eq!(matcher.count_hits("ab slab ab").get("l"), Some(2));
    }

    #[test]
    fn case_and_punctuation_invariance() {
        let matcher = compile(&[lexicon("l", &["bad word"])]).unwrap();
        assert_eq!(matcher.count_hits("Bad, WORD? bad-word!").get("l"), Some(2));
    }

    #[test]
    fn overlapping_distinct_patterns_all_count() {
        let matcher = compile(&[lexicon("l", &["a b", "b c"])]).unwrap();
        assert_eq!(matcher.count_hits("a b c").get("l"), Some(2));
    }

    #[test]
    fn distinct_mode_counts_patterns_once() {
        let matcher = compile(&[lexicon("l", &["x", "y"])]).unwrap();
        let text = "x x x y";
        assert_eq!(matcher.count_hits(text).get("l"), Some(4));
        assert_eq!(
            matcher
                .count_hits_with(text, CountingMode::Distinct)
                .get("l"),
            Some(2)
        );
    }

    #[test]
    fn flag_thresholds() {
        let matcher = compile(&[lexicon("l", &["x"])]).unwrap();
        let counts = matcher.count_hits("x x x");
        assert!(flag(&counts, "l", 3).unwrap());
        assert!(!flag(&counts, "l", 4).unwrap());
        let zero = matcher.count_hits("nothing here");
        assert!(!flag(&zero, "l", 1).unwrap());
        assert!(matches!(
            flag(&counts, "missing", 1),
            Err(LexiconError::UnknownLexicon(_))
        ));
    }

    #[test]
    fn ten_occurrences_meet_threshold_ten() {
        let matcher = compile(&[lexicon("l", &["x"])]).unwrap();
        let counts = matcher.count_hits(&"x ".repeat(10));
        assert_eq!(counts.get("l"), Some(10));
        assert!(flag(&counts, "l", 10).unwrap());
    }

    #[test]
    fn monotone_under_append() {
        let matcher = compile(&[lexicon("l", &["p q", "r"])]).unwrap();
        let a = matcher.count_hits("p q r p");
        let b = matcher.count_hits("p q r p r p q");
        assert!(b.get("l").unwrap() >= a.get("l").unwrap());
    }
}
