//! Statistical text classifier: TF-IDF weighted word 1–3-gram features and
//! logistic regression trained by deterministic full-batch gradient descent.
//!
//! Math is generic over the scalar type; the crate root exports `f64`
//! aliases which the pipeline and the model file format use.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize, word_ngrams};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary is empty (min_df excludes every n-gram)")]
    EmptyVocabulary,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad training data at line {line}: {reason}")]
    BadTrainingData { line: usize, reason: String },
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Sparse feature vector: (column, value) pairs with strictly increasing
/// column indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector<F> {
    entries: Vec<(u32, F)>,
}

impl<F: Float> SparseVector<F> {
    pub fn empty() -> Self {
        SparseVector { entries: Vec::new() }
    }

    /// Build from unordered pairs; indices must be unique.
    pub fn from_pairs(mut pairs: Vec<(u32, F)>) -> Result<Self, ClassifierError> {
        pairs.sort_by_key(|&(i, _)| i);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ClassifierError::DimensionMismatch(format!(
                    "duplicate column {}",
                    w[0].0
                )));
            }
        }
        if pairs.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(ClassifierError::DimensionMismatch(
                "non-finite value".to_string(),
            ));
        }
        Ok(SparseVector { entries: pairs })
    }

    pub fn entries(&self) -> &[(u32, F)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> F {
        self.entries
            .iter()
            .fold(F::zero(), |acc, &(_, v)| acc + v * v)
            .sqrt()
    }

    fn l2_normalize(&mut self) {
        let norm = self.norm();
        if norm > F::zero() {
            for (_, v) in &mut self.entries {
                *v = *v / norm;
            }
        }
    }

    pub fn dot(&self, dense: &[F]) -> F {
        self.entries
            .iter()
            .fold(F::zero(), |acc, &(i, v)| acc + dense[i as usize] * v)
    }

    fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|&(i, _)| i)
    }
}

/// Fitted TF-IDF vectorizer over word n-grams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vectorizer<F> {
    /// Vocabulary in column order (lexicographic); the index of a gram in
    /// this list is its column.
    vocab: Vec<String>,
    idf: Vec<F>,
    ngram_lo: usize,
    ngram_hi: usize,
    min_df: usize,
    n_docs: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl<F: Float> Vectorizer<F> {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn idf(&self) -> &[F] {
        &self.idf
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.ngram_lo, self.ngram_hi)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    fn build_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
    }

    /// TF-IDF transform: raw term counts times idf, L2-normalized unless
    /// zero. Out-of-vocabulary n-grams are ignored.
    pub fn transform(&self, text: &str) -> SparseVector<F> {
        self.transform_tokens(&tokenize(text))
    }

    pub fn transform_tokens(&self, tokens: &[String]) -> SparseVector<F> {
        let mut tf: HashMap<u32, u64> = HashMap::new();
        for gram in word_ngrams(tokens, self.ngram_lo, self.ngram_hi) {
            if let Some(&col) = self.index.get(&gram) {
                *tf.entry(col).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(u32, F)> = tf
            .into_iter()
            .map(|(col, count)| {
                let count = F::from(count).expect("term count fits the scalar type");
                (col, count * self.idf[col as usize])
            })
            .collect();
        entries.sort_by_key(|&(i, _)| i);
        let mut v = SparseVector { entries };
        v.l2_normalize();
        v
    }
}

/// Fit a vectorizer: vocabulary is every word n-gram with document
/// frequency >= `min_df`, columns ordered lexicographically,
/// idf(t) = ln(N / df(t)).
pub fn fit_vectorizer<F: Float>(
    corpus: &[String],
    ngram_range: (usize, usize),
    min_df: usize,
) -> Result<Vectorizer<F>, ClassifierError> {
    if corpus.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    let (lo, hi) = ngram_range;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        let tokens = tokenize(text);
        let grams: HashSet<String> = word_ngrams(&tokens, lo, hi).into_iter().collect();
        for gram in grams {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let n = corpus.len();
    let mut vocab = Vec::new();
    let mut idf = Vec::new();
    for (gram, count) in df {
        if count >= min_df.max(1) {
            vocab.push(gram);
            let ratio = F::from(n).unwrap() / F::from(count).unwrap();
            idf.push(ratio.ln());
        }
    }
    if vocab.is_empty() {
        return Err(ClassifierError::EmptyVocabulary);
    }
    let mut vectorizer = Vectorizer {
        vocab,
        idf,
        ngram_lo: lo,
        ngram_hi: hi,
        min_df,
        n_docs: n,
        index: HashMap::new(),
    };
    vectorizer.build_index();
    Ok(vectorizer)
}

/// Logistic regression weights over a vectorizer's columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel<F> {
    weights: Vec<F>,
    bias: F,
    l2_penalty: F,
}

impl<F: Float> LogisticModel<F> {
    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn bias(&self) -> F {
        self.bias
    }

    pub fn l2_penalty(&self) -> F {
        self.l2_penalty
    }

    /// Model with every weight negated; predicts the complementary class.
    pub fn negated(&self) -> LogisticModel<F> {
        LogisticModel {
            weights: self.weights.iter().map(|&w| -w).collect(),
            bias: -self.bias,
            l2_penalty: self.l2_penalty,
        }
    }

    pub fn weight_norm(&self) -> F {
        self.weights
            .iter()
            .fold(F::zero(), |acc, &w| acc + w * w)
            .sqrt()
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Mean logistic loss plus (l2/2)·‖w‖² over a batch. The bias is not
/// penalized.
pub fn logistic_loss<F: Float>(
    weights: &[F],
    bias: F,
    x: &[SparseVector<F>],
    y: &[bool],
    l2_penalty: F,
) -> F {
    let m = F::from(x.len()).unwrap();
    let mut total = F::zero();
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.dot(weights) + bias;
        // ln(1 + e^z) - y·z, computed without overflow.
        let softplus = if z > F::zero() {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        let y_term = if yi { z } else { F::zero() };
        total = total + softplus - y_term;
    }
    let two = F::from(2).unwrap();
    let reg = weights.iter().fold(F::zero(), |acc, &w| acc + w * w);
    total / m + l2_penalty / two * reg
}

/// Analytic gradient of [`logistic_loss`] in (weights, bias).
pub fn logistic_gradient<F: Float>(
    weights: &[F],
    bias: F,
    x: &[SparseVector<F>],
    y: &[bool],
    l2_penalty: F,
) -> (Vec<F>, F) {
    let m = F::from(x.len()).unwrap();
    let mut grad_w = vec![F::zero(); weights.len()];
    let mut grad_b = F::zero();
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.dot(weights) + bias;
        let err = sigmoid(z) - if yi { F::one() } else { F::zero() };
        for &(col, v) in xi.entries() {
            grad_w[col as usize] = grad_w[col as usize] + err * v;
        }
        grad_b = grad_b + err;
    }
    for (g, &w) in grad_w.iter_mut().zip(weights) {
        *g = *g / m + l2_penalty * w;
    }
    (grad_w, grad_b / m)
}

/// Training hyperparameters. `seed` is accepted for interface stability and
/// recorded in run metadata; full-batch descent from zero init has no
/// stochastic step.
#[derive(Debug, Clone, Copy)]
pub struct TrainParams<F> {
    pub l2_penalty: F,
    pub epochs: usize,
    pub learning_rate: F,
    pub seed: u64,
}

/// Train by full-batch gradient descent from zero initialization. When a
/// step would increase the loss the learning rate is halved and the step
/// retried, so the loss is non-increasing across epochs.
pub fn train<F: Float>(
    x: &[SparseVector<F>],
    y: &[bool],
    params: TrainParams<F>,
) -> Result<LogisticModel<F>, ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::DimensionMismatch(format!(
            "{} feature rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(ClassifierError::SingleClass);
    }
    let dim = x
        .iter()
        .filter_map(SparseVector::max_index)
        .max()
        .map_or(0, |i| i as usize + 1);

    let mut weights = vec![F::zero(); dim];
    let mut bias = F::zero();
    let mut lr = params.learning_rate;
    let mut loss = logistic_loss(&weights, bias, x, y, params.l2_penalty);
    let min_lr = params.learning_rate * F::from(1e-12).unwrap();

    for _ in 0..params.epochs {
        let (grad_w, grad_b) = logistic_gradient(&weights, bias, x, y, params.l2_penalty);
        loop {
            let cand_w: Vec<F> = weights
                .iter()
                .zip(&grad_w)
                .map(|(&w, &g)| w - lr * g)
                .collect();
            let cand_b = bias - lr * grad_b;
            let cand_loss = logistic_loss(&cand_w, cand_b, x, y, params.l2_penalty);
            if cand_loss <= loss {
                weights = cand_w;
                bias = cand_b;
                loss = cand_loss;
                break;
            }
            lr = lr / F::from(2).unwrap();
            if lr < min_lr {
                // No step at this scale improves the loss; we are at a
                // numerical optimum.
                return Ok(LogisticModel {
                    weights,
                    bias,
                    l2_penalty: params.l2_penalty,
                });
            }
        }
    }
    Ok(LogisticModel {
        weights,
        bias,
        l2_penalty: params.l2_penalty,
    })
}

/// P(class = 1 | x) = sigmoid(w·x + b).
pub fn predict_proba<F: Float>(
    model: &LogisticModel<F>,
    x: &SparseVector<F>,
) -> Result<F, ClassifierError> {
    if let Some(max) = x.max_index() {
        if max as usize >= model.weights.len() {
            return Err(ClassifierError::DimensionMismatch(format!(
                "feature column {max} exceeds model dimension {}",
                model.weights.len()
            )));
        }
    }
    Ok(sigmoid(x.dot(&model.weights) + model.bias))
}

/// Label used for this classifier in reports; it is a word-n-gram logistic
/// regression, not a part-of-speech-featured ensemble.
pub const CLASSIFIER_LABEL: &str = "word-ngram-lr";
/// Default probability threshold for flagging a document.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk container: vectorizer plus trained weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel<F> {
    pub version: u32,
    pub label: String,
    pub vectorizer: Vectorizer<F>,
    pub model: LogisticModel<F>,
}

impl<F: Float + Serialize + for<'de> Deserialize<'de>> ClassifierModel<F> {
    pub fn new(vectorizer: Vectorizer<F>, model: LogisticModel<F>) -> Self {
        ClassifierModel {
            version: MODEL_FORMAT_VERSION,
            label: CLASSIFIER_LABEL.to_string(),
            vectorizer,
            model,
        }
    }

    pub fn score_text(&self, text: &str) -> Result<F, ClassifierError> {
        predict_proba(&self.model, &self.vectorizer.transform(text))
    }

    pub fn score_tokens(&self, tokens: &[String]) -> Result<F, ClassifierError> {
        predict_proba(&self.model, &self.vectorizer.transform_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let json = serde_json::to_string(self)
            .map_err(|e| ClassifierError::BadModelFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let json = std::fs::read_to_string(path)?;
        let mut loaded: ClassifierModel<F> = serde_json::from_str(&json)
            .map_err(|e| ClassifierError::BadModelFile(e.to_string()))?;
        if loaded.version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::BadModelFile(format!(
                "unsupported model version {}",
                loaded.version
            )));
        }
        if loaded.vectorizer.vocab.len() != loaded.vectorizer.idf.len()
            || loaded.vectorizer.vocab.len() != loaded.model.weights.len()
        {
            return Err(ClassifierError::BadModelFile(
                "vocabulary, idf and weight lengths disagree".to_string(),
            ));
        }
        loaded.vectorizer.build_index();
        Ok(loaded)
    }
}

/// Parse a `label<TAB>text` training file; labels are `1` or `0`.
pub fn load_training_tsv(path: &Path) -> Result<(Vec<String>, Vec<bool>), ClassifierError> {
    let raw = std::fs::read_to_string(path)?;
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| ClassifierError::BadTrainingData {
                line: i + 1,
                reason: "missing tab separator".to_string(),
            })?;
        let label = match label.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(ClassifierError::BadTrainingData {
                    line: i + 1,
                    reason: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        labels.push(label);
        texts.push(text.to_string());
    }
    if texts.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    Ok((texts, labels))
}
