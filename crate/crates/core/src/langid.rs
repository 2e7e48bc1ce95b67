//! Character n-gram language identification (rank-order profiles).
//!
//! A profile is the K most frequent character 1..5-grams of normalized
//! training text. A document is identified by the profile minimizing the
//! out-of-place distance: for each document gram, the absolute rank
//! difference against the profile, with a penalty of K for grams the
//! profile does not contain.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::text::normalize;
use crate::wet::Document;

/// Default profile size cap.
pub const PROFILE_SIZE: usize = 300;
/// Largest character n-gram length that goes into a profile.
pub const MAX_GRAM_CHARS: usize = 5;
/// Documents shorter than this after normalization are dropped from audits
/// (and counted): language identification is meaningless on fragments.
pub const MIN_DOC_CHARS: usize = 20;

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("training text is empty after normalization")]
    EmptyTraining,
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("no profiles supplied")]
    NoProfiles,
    #[error("malformed profile file: {0}")]
    BadProfileFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Ranked character n-gram profile for one language.
#[derive(Debug, Clone)]
pub struct LangProfile {
    lang: String,
    capacity: usize,
    ranked_ngrams: Vec<String>,
    rank: HashMap<String, usize>,
}

impl LangProfile {
    pub fn lang(&self) -> &str {
        &self.lang
    }

    /// The size cap K the profile was built with (also the absent-gram
    /// penalty in the distance).
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ranked_ngrams(&self) -> &[String] {
        &self.ranked_ngrams
    }

    fn from_ranked(lang: String, capacity: usize, ranked_ngrams: Vec<String>) -> LangProfile {
        let rank = ranked_ngrams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
        LangProfile {
            lang,
            capacity,
            ranked_ngrams,
            rank,
        }
    }

    /// Profile file format: first line `lang:<code>`, then one n-gram per
    /// line in rank order.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), LangIdError> {
        writeln!(out, "lang:{}", self.lang)?;
        for gram in &self.ranked_ngrams {
            writeln!(out, "{gram}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<LangProfile, LangIdError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| LangIdError::BadProfileFile("empty file".to_string()))??;
        let lang = header
            .strip_prefix("lang:")
            .ok_or_else(|| {
                LangIdError::BadProfileFile(format!("first line `{header}` is not `lang:<code>`"))
            })?
            .trim()
            .to_string();
        if lang.is_empty() {
            return Err(LangIdError::BadProfileFile("empty language code".to_string()));
        }
        let mut ranked = Vec::new();
        for line in lines {
            let gram = line?;
            if gram.is_empty() {
                continue;
            }
            if ranked.contains(&gram) {
                return Err(LangIdError::BadProfileFile(format!(
                    "duplicate n-gram `{gram}`"
                )));
            }
            ranked.push(gram);
        }
        let capacity = ranked.len().max(PROFILE_SIZE);
        Ok(LangProfile::from_ranked(lang, capacity, ranked))
    }
}

fn char_ngram_counts(normalized: &str) -> HashMap<String, u64> {
    let chars: Vec<char> = normalized.chars().collect();
    let mut counts = HashMap::new();
    for n in 1..=MAX_GRAM_CHARS.min(chars.len()) {
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    counts
}

/// Rank grams by frequency (descending), ties broken lexicographically, and
/// keep the top `k`.
fn rank_grams(counts: HashMap<String, u64>, k: usize) -> Vec<String> {
    let mut items: Vec<(String, u64)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.truncate(k);
    items.into_iter().map(|(g, _)| g).collect()
}

/// Build the rank-order profile of `training_text`.
pub fn build_profile(
    training_text: &str,
    lang: &str,
    k: usize,
) -> Result<LangProfile, LangIdError> {
    let normalized = normalize(training_text);
    if normalized.is_empty() {
        return Err(LangIdError::EmptyTraining);
    }
    let ranked = rank_grams(char_ngram_counts(&normalized), k);
    Ok(LangProfile::from_ranked(lang.to_string(), k, ranked))
}

/// Out-of-place distance between a document's ranked gram list and a
/// profile.
fn out_of_place(doc_ranked: &[String], profile: &LangProfile) -> u64 {
    doc_ranked
        .iter()
        .enumerate()
        .map(|(doc_rank, gram)| match profile.rank.get(gram) {
            Some(&profile_rank) => doc_rank.abs_diff(profile_rank) as u64,
            None => profile.capacity as u64,
        })
        .sum()
}

/// Identify the language of `text`: the profile with minimal out-of-place
/// distance wins, ties broken by lexicographic language code.
pub fn identify(
    text: &str,
    profiles: &[LangProfile],
) -> Result<(String, u64), LangIdError> {
    if profiles.is_empty() {
        return Err(LangIdError::NoProfiles);
    }
    let normalized = normalize(text);
    if normalized.is_empty() {
        return Err(LangIdError::EmptyText);
    }
    let counts = char_ngram_counts(&normalized);
    // Document gram lists are capped like profiles; memoize per distinct K.
    let mut ranked_by_k: HashMap<usize, Vec<String>> = HashMap::new();
    let mut best: Option<(u64, &str)> = None;
    for profile in profiles {
        let doc_ranked = ranked_by_k
            .entry(profile.capacity)
            .or_insert_with(|| rank_grams(counts.clone(), profile.capacity));
        let distance = out_of_place(doc_ranked, profile);
        let candidate = (distance, profile.lang.as_str());
        best = Some(match best {
            None => candidate,
            Some(current) if candidate < current => candidate,
            Some(current) => current,
        });
    }
    let (distance, lang) = best.expect("profiles is non-empty");
    Ok((lang.to_string(), distance))
}

/// Why a document is excluded from the audited set, or the language match
/// that keeps it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LangDecision {
    Keep { lang: String, distance: u64 },
    TooShort,
    WrongLanguage { lang: String, distance: u64 },
}

/// Classify one document against the target language.
pub fn classify_text(
    text: &str,
    target: &str,
    profiles: &[LangProfile],
    max_distance: u64,
) -> Result<LangDecision, LangIdError> {
    if normalize(text).chars().count() < MIN_DOC_CHARS {
        return Ok(LangDecision::TooShort);
    }
    let (lang, distance) = identify(text, profiles)?;
    if lang == target && distance <= max_distance {
        Ok(LangDecision::Keep { lang, distance })
    } else {
        Ok(LangDecision::WrongLanguage { lang, distance })
    }
}

/// Result of filtering a batch: retained documents in input order plus the
/// drop bookkeeping audits report.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LangFilterCounts {
    pub dropped_short: usize,
    pub dropped_wrong_language: usize,
}

/// Retain exactly the documents identified as `target` within
/// `max_distance`, preserving order; short documents are dropped and
/// counted, not errors.
pub fn filter_language(
    docs: Vec<Document>,
    target: &str,
    profiles: &[LangProfile],
    max_distance: u64,
) -> Result<(Vec<Document>, LangFilterCounts), LangIdError> {
    if !profiles.iter().any(|p| p.lang == target) {
        return Err(LangIdError::NoProfiles);
    }
    let mut counts = LangFilterCounts::default();
    let mut retained = Vec::with_capacity(docs.len());
    for doc in docs {
        match classify_text(&doc.text, target, profiles, max_distance)? {
            LangDecision::Keep { .. } => retained.push(doc),
            LangDecision::TooShort => counts.dropped_short += 1,
            LangDecision::WrongLanguage { .. } => counts.dropped_wrong_language += 1,
        }
    }
    Ok((retained, counts))
}

/// Sample text the bundled profiles are built from, by language code.
pub fn bundled_sample_text(lang: &str) -> Option<&'static str> {
    match lang {
        "en" => Some(include_str!("../assets/lang/en.txt")),
        "fr" => Some(include_str!("../assets/lang/fr.txt")),
        "de" => Some(include_str!("../assets/lang/de.txt")),
        "es" => Some(include_str!("../assets/lang/es.txt")),
        _ => None,
    }
}

/// Profiles for en, fr, de, es built from sample text shipped with the
/// crate, each with K = [`PROFILE_SIZE`].
pub fn bundled_profiles() -> Vec<LangProfile> {
    ["en", "fr", "de", "es"]
        .iter()
        .map(|lang| {
            build_profile(bundled_sample_text(lang).unwrap(), lang, PROFILE_SIZE)
                .expect("bundled sample text is non-empty")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive count oracle: every 1..5-gram of the normalized text.
    fn oracle_counts(text: &str) -> HashMap<String, u64> {
        let norm = normalize(text);
        let chars: Vec<char> = norm.chars().collect();
        let mut counts = HashMap::new();
        for start in 0..chars.len() {
            for len in 1..=MAX_GRAM_CHARS {
                if start + len > chars.len() {
                    break;
                }
                let gram: String = chars[start..start + len].iter().collect();
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn profile_of_repeated_letter() {
        let profile = build_profile("aaaa", "xx", 3).unwrap();
        // Counts: "a" x4, "aa" x3, "aaa" x2, "aaaa" x1 — top 3 by frequency.
        assert_eq!(profile.ranked_ngrams(), ["a", "aa", "aaa"]);
        assert_eq!(oracle_counts("aaaa")["a"], 4);
        assert_eq!(oracle_counts("aaaa")["aaa"], 2);
    }

    #[test]
    fn profile_matches_exhaustive_oracle() {
        let text = "the cat sat on the mat, the cat ran";
        let profile = build_profile(text, "en", 1000).unwrap();
        let oracle = oracle_counts(text);
        assert_eq!(profile.ranked_ngrams().len(), oracle.len());
        // Ranking is non-increasing in oracle frequency.
        let freqs: Vec<u64> = profile
            .ranked_ngrams()
            .iter()
            .map(|g| oracle[g])
            .collect();
        assert!(freqs.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_capacity_profile_is_empty() {
        let profile = build_profile("hello", "en", 0).unwrap();
        assert!(profile.ranked_ngrams().is_empty());
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_profile("some text for the profile", "en", 50).unwrap();
        let b = build_profile("some text for the profile", "en", 50).unwrap();
        assert_eq!(a.ranked_ngrams(), b.ranked_ngrams());
    }

    #[test]
    fn empty_training_rejected() {
        assert!(matches!(
            build_profile("!!! ???", "en", 10),
            Err(LangIdError::EmptyTraining)
        ));
    }

    #[test]
    fn self_match_distance_zero() {
        let text = bundled_sample_text("en").unwrap();
        let profiles = bundled_profiles();
        let (lang, distance) = identify(text, &profiles).unwrap();
        assert_eq!(lang, "en");
        assert_eq!(distance, 0);
    }

    #[test]
    fn english_pangram_identified() {
        let profiles = bundled_profiles();
        let (lang, _) = identify(
            "The quick brown fox jumps over the lazy dog while the children watch from the window.",
            &profiles,
        )
        .unwrap();
        assert_eq!(lang, "en");
    }

    #[test]
    fn each_bundled_language_identifies_itself() {
        let profiles = bundled_profiles();
        for code in ["en", "fr", "de", "es"] {
            let text = bundled_sample_text(code).unwrap();
            // Use the middle paragraph only: held-in but partial text.
            let sample: String = text.lines().skip(8).take(5).collect::<Vec<_>>().join(" ");
            let (lang, _) = identify(&sample, &profiles).unwrap();
            assert_eq!(lang, code, "sample: {sample}");
        }
    }

    #[test]
    fn single_profile_always_wins() {
        let profile = build_profile("bonjour tout le monde", "fr", 100).unwrap();
        let (lang, _) = identify("completely unrelated words here", &[profile]).unwrap();
        assert_eq!(lang, "fr");
    }

    #[test]
    fn identify_errors() {
        assert!(matches!(identify("text", &[]), Err(LangIdError::NoProfiles)));
        let profiles = bundled_profiles();
        assert!(matches!(
            identify("??!", &profiles),
            Err(LangIdError::EmptyText)
        ));
    }

    #[test]
    fn identify_is_permutation_invariant() {
        let mut profiles = bundled_profiles();
        let text = "the fishermen repair their nets by the pier in the evening";
        let forward = identify(text, &profiles).unwrap();
        profiles.reverse();
        assert_eq!(identify(text, &profiles).unwrap(), forward);
    }

    fn doc(id: &str, text: &str) -> Document {
        Document {
            record_id: id.to_string(),
            url: String::new(),
            text: text.to_string(),
            byte_len: text.len(),
            replacements: 0,
        }
    }

    /// Synthetic labeled docs: sliding 3-line windows over a sample text.
    fn window_docs(lang: &str, n: usize) -> Vec<Document> {
        let lines: Vec<&str> = bundled_sample_text(lang)
            .unwrap()
            .lines()
            .filter(|l| !l.is_empty())
            .collect();
        (0..n)
            .map(|i| {
                let start = i % (lines.len() - 3);
                doc(
                    &format!("{lang}-{i:03}"),
                    &lines[start..start + 3].join(" "),
                )
            })
            .collect()
    }

    #[test]
    fn filter_retains_target_language_in_order() {
        let profiles = bundled_profiles();
        let mut docs = window_docs("en", 50);
        docs.extend(window_docs("fr", 50));
        let (kept, counts) =
            filter_language(docs.clone(), "en", &profiles, u64::MAX).unwrap();
        assert_eq!(kept.len(), 50);
        assert!(kept.iter().all(|d| d.record_id.starts_with("en")));
        assert_eq!(counts.dropped_wrong_language, 50);
        // Subsequence property: relative order preserved.
        let ids: Vec<_> = kept.iter().map(|d| d.record_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn filter_empty_input() {
        let profiles = bundled_profiles();
        let (kept, counts) = filter_language(Vec::new(), "en", &profiles, u64::MAX).unwrap();
        assert!(kept.is_empty());
        assert_eq!(counts, LangFilterCounts::default());
    }

    #[test]
    fn short_documents_dropped_and_counted() {
        let profiles = bundled_profiles();
        let docs = vec![doc("a", "hi"), doc("b", "the library near the river keeps its reading room open")];
        let (kept, counts) = filter_language(docs, "en", &profiles, u64::MAX).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(counts.dropped_short, 1);
    }

    #[test]
    fn profile_file_round_trip() {
        let profile = build_profile("profile file round trip text", "en", 40).unwrap();
        let mut buf = Vec::new();
        profile.write_to(&mut buf).unwrap();
        let loaded = LangProfile::read_from(&buf[..]).unwrap();
        assert_eq!(loaded.lang(), "en");
        assert_eq!(loaded.ranked_ngrams(), profile.ranked_ngrams());
    }
}
