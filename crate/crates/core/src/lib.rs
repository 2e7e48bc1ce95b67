//! Batch auditing toolkit for web-crawl text corpora.
//!
//! The pipeline streams WET shards into documents, keeps the target
//! language, counts lexicon phrase hits, scores documents with a
//! statistical classifier and a reference-corpus n-gram language model,
//! buckets them into perplexity terciles, and aggregates per-bucket flag
//! rates and metric correlations.
//!
//! Numeric kernels (classifier, language model, correlation) are generic
//! over the scalar type via `num_traits::Float`; the aliases below pin the
//! `f64` instantiations the pipeline and the file formats use.

pub mod analytics;
pub mod classifier;
pub mod langid;
pub mod lexicon;
pub mod manifest;
pub mod ngram_lm;
pub mod pipeline;
pub mod text;
pub mod wet;

/// Kneser-Ney n-gram model over `f64`.
pub type NGramModel = ngram_lm::NGramModel<f64>;
/// Per-document perplexity over `f64`.
pub type PerplexityScore = ngram_lm::PerplexityScore<f64>;
/// TF-IDF vectorizer over `f64`.
pub type Vectorizer = classifier::Vectorizer<f64>;
/// Sparse feature vector over `f64`.
pub type SparseVector = classifier::SparseVector<f64>;
/// Logistic-regression weights over `f64`.
pub type LogisticModel = classifier::LogisticModel<f64>;
/// Serialized classifier container over `f64`.
pub type ClassifierModel = classifier::ClassifierModel<f64>;
/// Metric correlation matrix over `f64`.
pub type CorrelationMatrix = analytics::CorrelationMatrix<f64>;

pub use analytics::{assign_buckets, bucket_rates, correlation_matrix, pearson};
pub use analytics::{AuditRecord, Bucket, BucketTable, MetricSpec};
pub use langid::{build_profile, bundled_profiles, filter_language, identify, LangProfile};
pub use lexicon::{compile, flag, load_lexicon, CountingMode, HitCounts, Lexicon, Matcher};
pub use manifest::ShardManifest;
pub use ngram_lm::train_ngram_lm;
pub use pipeline::{merge_external_scores, run_audit, AuditConfig, RunSummary};
pub use wet::{parse_wet_stream, record_to_document, serialize_wet, Document, RawRecord};
