//! Interpolated Kneser-Ney n-gram language model and per-document
//! perplexity.
//!
//! Probability of a word given its context interpolates down through the
//! model orders, each level applying one absolute discount and handing the
//! reclaimed mass to the level below; the recursion bottoms out at the
//! uniform distribution over the vocabulary, so every vocabulary word has
//! strictly positive probability in every context.
//!
//! Counting conventions (all of them load-bearing for the probabilities):
//! - sentences are padded with `order - 1` start sentinels and one `</s>`;
//!   windows that would predict a start sentinel are not counted;
//! - the highest level uses raw counts; lower levels use continuation
//!   counts (distinct left extensions), except that n-grams beginning with
//!   the start sentinel keep raw counts, since nothing can extend them;
//! - per-level discounts are estimated from that level's effective counts
//!   as D = n1 / (n1 + 2*n2), clamped to [0, 0.999]; a degenerate estimate
//!   (no singletons, or an empty table) falls back to 0.5 so the smoothing
//!   mass never vanishes;
//! - tokens seen fewer than `min_count` times at training map to `<unk>`.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Start-of-sentence sentinel (context only, never predicted).
pub const SENT_START: &str = "<s>";
/// End-of-sentence token (in the vocabulary, predicted like a word).
pub const SENT_END: &str = "</s>";
/// Replacement for tokens below the training count threshold.
pub const UNK: &str = "<unk>";

const UNK_ID: u32 = 0;
const EOS_ID: u32 = 1;
/// Sentinel id for `<s>`; deliberately outside the vocabulary id range.
const START_ID: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model order must be at least 1")]
    OrderZero,
    #[error("document is empty after tokenization")]
    EmptyDocument,
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Per-document perplexity: `exp` of the mean negative log-probability over
/// the `token_count` scored positions (document tokens plus `</s>`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityScore<F> {
    pub value: F,
    pub token_count: usize,
}

type Gram = Vec<u32>;

/// Kneser-Ney smoothed n-gram model.
#[derive(Debug, Clone)]
pub struct NGramModel<F> {
    order: usize,
    min_count: usize,
    /// Vocabulary in id order: `<unk>`, `</s>`, then words sorted
    /// lexicographically. `<s>` is not in the vocabulary.
    vocab: Vec<String>,
    token_ids: HashMap<String, u32>,
    /// Raw padded-window counts, level k at index k-1.
    counts: Vec<HashMap<Gram, u64>>,
    /// Effective counts the probability estimator runs on (continuation
    /// counts below the top level).
    adjusted: Vec<HashMap<Gram, u64>>,
    /// Per level: context -> sum of adjusted counts of its continuations.
    ctx_total: Vec<HashMap<Gram, u64>>,
    /// Per level: context -> number of distinct continuations.
    ctx_distinct: Vec<HashMap<Gram, u64>>,
    discounts: Vec<F>,
}

impl<F: Float> NGramModel<F> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn discounts(&self) -> &[F] {
        &self.discounts
    }

    /// Raw count of an n-gram given as tokens (sentinels allowed).
    pub fn raw_count(&self, gram: &[&str]) -> u64 {
        let ids: Gram = gram.iter().map(|t| self.token_id(t)).collect();
        if ids.is_empty() || ids.len() > self.order {
            return 0;
        }
        self.counts[ids.len() - 1].get(&ids).copied().unwrap_or(0)
    }

    fn token_id(&self, token: &str) -> u32 {
        if token == SENT_START {
            return START_ID;
        }
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    fn token_str(&self, id: u32) -> &str {
        if id == START_ID {
            SENT_START
        } else {
            &self.vocab[id as usize]
        }
    }

    /// Interpolated probability, bottom-up from the uniform base. Levels
    /// whose context was never observed are skipped, which keeps each
    /// conditional a proper distribution.
    fn prob_id(&self, word: u32, context: &[u32]) -> F {
        debug_assert_eq!(context.len(), self.order - 1);
        debug_assert_ne!(word, START_ID);
        let mut p = F::one() / F::from(self.vocab.len()).unwrap();
        for level in 1..=self.order {
            let ctx = &context[context.len() - (level - 1)..];
            let total = match self.ctx_total[level - 1].get(ctx) {
                Some(&t) if t > 0 => F::from(t).unwrap(),
                _ => continue,
            };
            let discount = self.discounts[level - 1];
            let distinct =
                F::from(*self.ctx_distinct[level - 1].get(ctx).unwrap()).unwrap();
            let mut gram = ctx.to_vec();
            gram.push(word);
            let count = self.adjusted[level - 1]
                .get(&gram)
                .map(|&c| F::from(c).unwrap())
                .unwrap_or_else(F::zero);
            let head = (count - discount).max(F::zero()) / total;
            p = head + discount * distinct / total * p;
        }
        p
    }

    /// Probability of `word` after `context` (exactly `order - 1` tokens;
    /// use `<s>` for positions before the first word). Out-of-vocabulary
    /// tokens are mapped to `<unk>` here.
    pub fn prob(&self, word: &str, context: &[&str]) -> F {
        assert_eq!(
            context.len(),
            self.order - 1,
            "context must hold order-1 tokens"
        );
        let ctx: Gram = context.iter().map(|t| self.token_id(t)).collect();
        self.prob_id(self.token_id(word), &ctx)
    }

    /// Every context observed at the top level, as token strings. Useful
    /// for normalization checks.
    pub fn top_level_contexts(&self) -> Vec<Vec<String>> {
        let mut contexts: Vec<Vec<String>> = self.ctx_total[self.order - 1]
            .keys()
            .map(|ctx| ctx.iter().map(|&id| self.token_str(id).to_string()).collect())
            .collect();
        contexts.sort();
        contexts
    }

    /// Perplexity of a document scored as one padded sequence.
    pub fn perplexity(&self, doc_tokens: &[String]) -> Result<PerplexityScore<F>, LmError> {
        if doc_tokens.is_empty() {
            return Err(LmError::EmptyDocument);
        }
        let mut seq: Gram = vec![START_ID; self.order - 1];
        seq.extend(doc_tokens.iter().map(|t| self.token_id(t)));
        seq.push(EOS_ID);

        let mut log_sum = F::zero();
        let predictions = doc_tokens.len() + 1;
        for i in (self.order - 1)..seq.len() {
            let p = self.prob_id(seq[i], &seq[i - (self.order - 1)..i]);
            log_sum = log_sum + p.ln();
        }
        let n = F::from(predictions).unwrap();
        Ok(PerplexityScore {
            value: (-log_sum / n).exp(),
            token_count: predictions,
        })
    }
}

/// Estimate one level's discount from its count-of-counts.
fn estimate_discount<F: Float>(table: &HashMap<Gram, u64>) -> F {
    let mut n1 = 0u64;
    let mut n2 = 0u64;
    for &c in table.values() {
        match c {
            1 => n1 += 1,
            2 => n2 += 1,
            _ => {}
        }
    }
    let fallback = F::from(0.5).unwrap();
    if n1 == 0 {
        // No singletons (or empty table): the estimator degenerates to 0,
        // which would zero out the smoothing mass.
        return fallback;
    }
    let d = F::from(n1).unwrap() / F::from(n1 + 2 * n2).unwrap();
    let ceiling = F::from(0.999).unwrap();
    if d > ceiling {
        ceiling
    } else {
        d
    }
}

/// Train a model on tokenized sentences.
pub fn train_ngram_lm<F: Float>(
    corpus: &[Vec<String>],
    order: usize,
    min_count: usize,
) -> Result<NGramModel<F>, LmError> {
    if order == 0 {
        return Err(LmError::OrderZero);
    }
    let sentences: Vec<&Vec<String>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }

    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for sentence in &sentences {
        for token in sentence.iter() {
            *word_freq.entry(token).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<&str> = word_freq
        .iter()
        .filter(|&(w, &c)| c >= min_count as u64 && *w != SENT_START && *w != SENT_END && *w != UNK)
        .map(|(&w, _)| w)
        .collect();
    kept.sort_unstable();

    let mut vocab: Vec<String> = Vec::with_capacity(kept.len() + 2);
    vocab.push(UNK.to_string());
    vocab.push(SENT_END.to_string());
    vocab.extend(kept.iter().map(|w| w.to_string()));
    let token_ids: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();

    let mut counts: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
    for sentence in &sentences {
        let mut seq: Gram = vec![START_ID; order - 1];
        seq.extend(
            sentence
                .iter()
                .map(|t| token_ids.get(t.as_str()).copied().unwrap_or(UNK_ID)),
        );
        seq.push(EOS_ID);
        for level in 1..=order {
            for window in seq.windows(level) {
                if *window.last().unwrap() == START_ID {
                    continue;
                }
                *counts[level - 1].entry(window.to_vec()).or_insert(0) += 1;
            }
        }
    }

    let model = finish_model(order, min_count, vocab, token_ids, counts);
    Ok(model)
}

/// Derive adjusted counts, context tables and discounts from raw counts.
fn finish_model<F: Float>(
    order: usize,
    min_count: usize,
    vocab: Vec<String>,
    token_ids: HashMap<String, u32>,
    counts: Vec<HashMap<Gram, u64>>,
) -> NGramModel<F> {
    let mut adjusted: Vec<HashMap<Gram, u64>> = Vec::with_capacity(order);
    for level in 1..=order {
        if level == order {
            adjusted.push(counts[level - 1].clone());
            continue;
        }
        // Continuation counts: distinct left extensions at level+1. Every
        // key of the level+1 table is unique, so each contributes one.
        let mut table: HashMap<Gram, u64> = HashMap::new();
        for gram in counts[level].keys() {
            let suffix = gram[1..].to_vec();
            if suffix[0] != START_ID {
                *table.entry(suffix).or_insert(0) += 1;
            }
        }
        // Start-sentinel-initial grams cannot be left-extended; they keep
        // their raw counts.
        for (gram, &count) in &counts[level - 1] {
            if gram[0] == START_ID {
                table.insert(gram.clone(), count);
            }
        }
        adjusted.push(table);
    }

    let mut ctx_total: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
    let mut ctx_distinct: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
    for level in 1..=order {
        for (gram, &count) in &adjusted[level - 1] {
            let ctx = gram[..level - 1].to_vec();
            *ctx_total[level - 1].entry(ctx.clone()).or_insert(0) += count;
            *ctx_distinct[level - 1].entry(ctx).or_insert(0) += 1;
        }
    }

    let discounts = adjusted.iter().map(estimate_discount).collect();

    NGramModel {
        order,
        min_count,
        vocab,
        token_ids,
        counts,
        adjusted,
        ctx_total,
        ctx_distinct,
        discounts,
    }
}

/// Split text into sentences on newlines, tokenize, and train.
pub fn train_from_text<F: Float>(
    text: &str,
    order: usize,
    min_count: usize,
) -> Result<NGramModel<F>, LmError> {
    let sentences: Vec<Vec<String>> = text.lines().map(crate::text::tokenize).collect();
    train_ngram_lm(&sentences, order, min_count)
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk form: raw integer count tables only; derived tables and
/// discounts are rebuilt on load, so the file is scalar-type agnostic.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    min_count: usize,
    vocab: Vec<String>,
    counts: Vec<Vec<(Gram, u64)>>,
}

impl<F: Float> NGramModel<F> {
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let mut levels = Vec::with_capacity(self.order);
        for table in &self.counts {
            let mut entries: Vec<(Gram, u64)> =
                table.iter().map(|(g, &c)| (g.clone(), c)).collect();
            entries.sort();
            levels.push(entries);
        }
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            order: self.order,
            min_count: self.min_count,
            vocab: self.vocab.clone(),
            counts: levels,
        };
        let json =
            serde_json::to_string(&file).map_err(|e| LmError::BadModelFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let json = std::fs::read_to_string(path)?;
        let file: ModelFile =
            serde_json::from_str(&json).map_err(|e| LmError::BadModelFile(e.to_string()))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(LmError::BadModelFile(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        if file.order == 0 {
            return Err(LmError::BadModelFile("order is zero".to_string()));
        }
        if file.counts.len() != file.order {
            return Err(LmError::BadModelFile(format!(
                "expected {} count tables, found {}",
                file.order,
                file.counts.len()
            )));
        }
        if file.vocab.len() < 2 || file.vocab[0] != UNK || file.vocab[1] != SENT_END {
            return Err(LmError::BadModelFile(
                "vocabulary must start with <unk>, </s>".to_string(),
            ));
        }
        let token_ids: HashMap<String, u32> = file
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let vocab_len = file.vocab.len() as u32;
        let mut counts: Vec<HashMap<Gram, u64>> = Vec::with_capacity(file.order);
        for (level, entries) in file.counts.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(entries.len());
            for (gram, count) in entries {
                if gram.len() != level + 1 {
                    return Err(LmError::BadModelFile(format!(
                        "level {} table holds a {}-gram",
                        level + 1,
                        gram.len()
                    )));
                }
                if gram.iter().any(|&id| id != START_ID && id >= vocab_len) {
                    return Err(LmError::BadModelFile("token id out of range".to_string()));
                }
                table.insert(gram, count);
            }
            counts.push(table);
        }
        Ok(finish_model(
            file.order,
            file.min_count,
            file.vocab,
            token_ids,
            counts,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn sentences(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn unigram_vocab_construction() {
        let model: NGramModel<f64> =
            train_ngram_lm(&sentences(&["a b"]), 1, 1).unwrap();
        let mut vocab = model.vocab().to_vec();
        vocab.sort();
        assert_eq!(vocab, ["</s>", "<unk>", "a", "b"]);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = sentences(&["a b c", "b c d", "a d"]);
        let a: NGramModel<f64> = train_ngram_lm(&corpus, 2, 1).unwrap();
        let b: NGramModel<f64> = train_ngram_lm(&corpus, 2, 1).unwrap();
        assert_eq!(a.vocab(), b.vocab());
        for w in a.vocab() {
            for c in a.vocab() {
                assert_eq!(a.prob(w, &[c]), b.prob(w, &[c]));
            }
        }
    }

    #[test]
    fn train_errors() {
        assert!(matches!(
            train_ngram_lm::<f64>(&sentences(&["a b"]), 0, 1),
            Err(LmError::OrderZero)
        ));
        assert!(matches!(
            train_ngram_lm::<f64>(&[], 2, 1),
            Err(LmError::EmptyCorpus)
        ));
    }

    /// Hand-derived bigram case. Corpus: "a b", "a c"; order 2; min_count 1.
    ///
    /// Raw level-2 counts: (<s> a)=2, (a b)=1, (b </s>)=1, (a c)=1,
    /// (c </s>)=1 -> D2 = 4/(4+2) = 2/3. Continuation level-1 counts:
    /// a=1, b=1, c=1, </s>=2 -> D1 = 3/5. V = 5.
    ///
    /// P1(b) = (1-0.6)/5 + 0.6*(4/5)*(1/5) = 0.176
    /// P(b|a) = (1-2/3)/2 + (2/3)*(2/2)*0.176 = 0.284
    /// P(<unk>|a) = 0 + (2/3)*P1(<unk>) = (2/3)*0.096 = 0.064
    #[test]
    fn bigram_matches_hand_applied_formula() {
        let model: NGramModel<f64> =
            train_ngram_lm(&sentences(&["a b", "a c"]), 2, 1).unwrap();
        assert_eq!(model.vocab_size(), 5);
        assert!((model.discounts()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((model.discounts()[0] - 0.6).abs() < 1e-15);
        assert!((model.prob("b", &["a"]) - 0.284).abs() < 1e-12);
        assert!((model.prob(UNK, &["a"]) - 0.064).abs() < 1e-12);
        // Unseen word maps to <unk>: same smoothed probability.
        assert_eq!(model.prob("zzz", &["a"]), model.prob(UNK, &["a"]));
        assert!(model.prob("zzz", &["a"]) > 0.0);
    }

    #[test]
    fn observed_contexts_normalize() {
        let corpus = sentences(&[
            "the cat sat on the mat",
            "the dog sat on the rug",
            "a cat and a dog",
            "the mat and the rug",
        ]);
        for order in [1usize, 2, 3] {
            let model: NGramModel<f64> = train_ngram_lm(&corpus, order, 1).unwrap();
            for ctx in model.top_level_contexts() {
                let ctx_refs: Vec<&str> = ctx.iter().map(String::as_str).collect();
                let total: f64 = model
                    .vocab()
                    .iter()
                    .map(|w| model.prob(w, &ctx_refs))
                    .sum();
                assert!(
                    (total - 1.0).abs() < 1e-9,
                    "order {order} context {ctx:?}: sum {total}"
                );
            }
        }
    }

    #[test]
    fn min_count_maps_rare_words_to_unk() {
        let model: NGramModel<f64> =
            train_ngram_lm(&sentences(&["a a b", "a a c"]), 1, 2).unwrap();
        // b and c fall below min_count: vocabulary is sentinels plus "a".
        let mut vocab = model.vocab().to_vec();
        vocab.sort();
        assert_eq!(vocab, ["</s>", "<unk>", "a"]);
        assert_eq!(model.raw_count(&[UNK]), 2);
    }

    /// Equal effective counts make the discount redistribute mass exactly
    /// uniformly, whatever its value.
    fn uniform_unigram_model(v: usize) -> NGramModel<f64> {
        assert!(v >= 2);
        let real_words = v - 2;
        let corpus = if real_words == 0 {
            // One rare token per sentence: <unk> and </s> both count 2.
            vec![vec!["rare1".to_string()], vec!["rare2".to_string()]]
        } else {
            let mut first: Vec<String> = Vec::new();
            for i in 0..real_words {
                first.push(format!("w{i}"));
                first.push(format!("w{i}"));
            }
            // Two singleton tokens become two <unk> occurrences; two
            // sentences give </s> a count of 2 as well.
            let second = vec!["rare1".to_string(), "rare2".to_string()];
            vec![first, second]
        };
        let model = train_ngram_lm(&corpus, 1, 2).unwrap();
        assert_eq!(model.vocab_size(), v);
        model
    }

    #[test]
    fn uniform_unigram_probabilities() {
        for v in [2usize, 4, 16] {
            let model = uniform_unigram_model(v);
            let expected = 1.0 / v as f64;
            for w in model.vocab() {
                assert!(
                    (model.prob(w, &[]) - expected).abs() < 1e-12,
                    "V={v} word {w}"
                );
            }
        }
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        let model = uniform_unigram_model(4);
        let doc: Vec<String> = ["w0", "w1", "w0", "w1", "w0", "w1", "w0", "w1", "w0", "w1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let score = model.perplexity(&doc).unwrap();
        assert_eq!(score.token_count, 11);
        assert!((score.value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn perplexity_follows_padding_convention() {
        // Regression fixture: the document is scored as one sequence padded
        // with order-1 start sentinels and one </s>.
        let model: NGramModel<f64> =
            train_ngram_lm(&sentences(&["a b", "a c"]), 2, 1).unwrap();
        let doc = vec!["a".to_string(), "b".to_string()];
        let score = model.perplexity(&doc).unwrap();
        let expected = -(model.prob("a", &[SENT_START]).ln()
            + model.prob("b", &["a"]).ln()
            + model.prob(SENT_END, &["b"]).ln())
            / 3.0;
        assert!((score.value - expected.exp()).abs() < 1e-12);
        assert_eq!(score.token_count, 3);
    }

    #[test]
    fn empty_document_rejected() {
        let model: NGramModel<f64> =
            train_ngram_lm(&sentences(&["a b"]), 2, 1).unwrap();
        assert!(matches!(model.perplexity(&[]), Err(LmError::EmptyDocument)));
    }

    #[test]
    fn training_sentences_beat_shuffled_tokens() {
        let corpus = sentences(&[
            "the small cat sleeps on the warm mat",
            "the old dog rests by the open door",
            "a young bird sings in the tall tree",
            "the small dog sleeps by the warm door",
        ]);
        let model: NGramModel<f64> = train_ngram_lm(&corpus, 3, 1).unwrap();
        let original = tokenize("the small cat sleeps on the warm mat");
        let shuffled = tokenize("mat warm the on sleeps cat small the");
        let pp_orig = model.perplexity(&original).unwrap().value;
        let pp_shuf = model.perplexity(&shuffled).unwrap().value;
        assert!(
            pp_orig < pp_shuf,
            "trained order should score lower: {pp_orig} vs {pp_shuf}"
        );
    }

    #[test]
    fn model_file_round_trip() {
        let corpus = sentences(&["a b c d", "b c d e", "a c e"]);
        let model: NGramModel<f64> = train_ngram_lm(&corpus, 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        model.save(&path).unwrap();
        let loaded: NGramModel<f64> = NGramModel::load(&path).unwrap();

        assert_eq!(loaded.order(), model.order());
        assert_eq!(loaded.vocab(), model.vocab());
        for w in model.vocab() {
            for c1 in model.vocab() {
                let ctx = [SENT_START, c1.as_str()];
                assert_eq!(loaded.prob(w, &ctx), model.prob(w, &ctx));
            }
        }
        let doc = tokenize("a b c e d");
        assert_eq!(
            loaded.perplexity(&doc).unwrap().value,
            model.perplexity(&doc).unwrap().value
        );
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"version\": 99}").unwrap();
        assert!(matches!(
            NGramModel::<f64>::load(&path),
            Err(LmError::BadModelFile(_))
        ));
    }
}
