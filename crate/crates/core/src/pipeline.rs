//! End-to-end audit orchestration: parse shards, filter by language, score
//! every retained document with each configured detector, and write one
//! audit line per document.
//!
//! Shards fan out across workers that share only immutable models; results
//! merge into a single file sorted by record id, so the output is a pure
//! function of (config, input bytes) whatever the worker count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::analytics::{AuditRecord, Bucket};
use crate::classifier::{ClassifierError, ClassifierModel};
use crate::langid::{classify_text, LangDecision, LangIdError, LangProfile};
use crate::lexicon::{CountingMode, Lexicon, LexiconError, Matcher};
use crate::manifest::ManifestError;
use crate::ngram_lm::{LmError, NGramModel};
use crate::text::{tokenize, TOKENIZER_VERSION};
use crate::wet::{open_wet, record_to_document, Converted, WetError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shard `{shard}` record {record}: {message}")]
    Shard {
        shard: String,
        record: usize,
        message: String,
    },
    #[error("metric `{0}` already present in audit file")]
    DuplicateMetricName(String),
    #[error("malformed scores file at line {line}: {reason}")]
    MalformedScores { line: usize, reason: String },
    #[error("malformed audit file at line {line}: {reason}")]
    MalformedAudit { line: usize, reason: String },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    LangId(#[from] LangIdError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Wet(#[from] WetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one audit run needs. Immutable once built; workers share it.
pub struct AuditConfig {
    pub shards: Vec<PathBuf>,
    pub target_lang: String,
    pub max_distance: u64,
    pub profiles: Vec<LangProfile>,
    pub lexicons: Vec<Lexicon>,
    pub counting_mode: CountingMode,
    pub classifier: Option<ClassifierModel<f64>>,
    pub lm: Option<NGramModel<f64>>,
    pub strict: bool,
    pub workers: usize,
    pub out: PathBuf,
    /// Recorded in the metadata sidecar when sampling produced the shard
    /// list.
    pub sample_seed: Option<u64>,
    pub sample_rate: Option<f64>,
}

impl AuditConfig {
    pub fn new(shards: Vec<PathBuf>, target_lang: &str, out: &Path) -> Self {
        AuditConfig {
            shards,
            target_lang: target_lang.to_string(),
            max_distance: u64::MAX,
            profiles: crate::langid::bundled_profiles(),
            lexicons: Vec::new(),
            counting_mode: CountingMode::Total,
            classifier: None,
            lm: None,
            strict: false,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out: out.to_path_buf(),
            sample_seed: None,
            sample_rate: None,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.lexicons.is_empty() && self.classifier.is_none() && self.lm.is_none() {
            return Err(PipelineError::Config(
                "no detector configured: need a lexicon, a classifier or a language model"
                    .to_string(),
            ));
        }
        if !self.profiles.iter().any(|p| p.lang() == self.target_lang) {
            return Err(PipelineError::Config(format!(
                "no language profile for target `{}`",
                self.target_lang
            )));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("worker count is zero".to_string()));
        }
        Ok(())
    }
}

/// One shard-level failure, recorded (non-strict) or fatal (strict).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardError {
    pub shard: String,
    pub record: usize,
    pub message: String,
}

/// Bookkeeping for a run. The identity
/// `retained = read - skipped - dropped_short - dropped_wrong_language`
/// holds exactly on every run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub records_read: u64,
    pub skipped_non_conversion: u64,
    pub dropped_short: u64,
    pub dropped_wrong_language: u64,
    pub decode_replacements: u64,
    pub retained: u64,
    pub shard_errors: Vec<ShardError>,
}

impl RunSummary {
    fn absorb(&mut self, other: RunSummary) {
        self.records_read += other.records_read;
        self.skipped_non_conversion += other.skipped_non_conversion;
        self.dropped_short += other.dropped_short;
        self.dropped_wrong_language += other.dropped_wrong_language;
        self.decode_replacements += other.decode_replacements;
        self.retained += other.retained;
        self.shard_errors.extend(other.shard_errors);
    }

    pub fn bookkeeping_holds(&self) -> bool {
        self.retained
            == self.records_read
                - self.skipped_non_conversion
                - self.dropped_short
                - self.dropped_wrong_language
    }
}

/// Run metadata written next to the audit file and embedded in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditMeta {
    pub target_lang: String,
    pub max_distance: u64,
    pub counting_mode: String,
    pub tokenizer_version: String,
    pub lexicons: Vec<LexiconMeta>,
    pub classifier: Option<String>,
    pub lm: Option<LmMeta>,
    pub sample_seed: Option<u64>,
    pub sample_rate: Option<f64>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconMeta {
    pub name: String,
    pub patterns: usize,
    pub duplicates_dropped: usize,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmMeta {
    pub order: usize,
    pub min_count: usize,
    pub vocab_size: usize,
    /// Perplexity is normalized per token; noted because bucketing is
    /// sensitive to the convention.
    pub normalization: String,
}

struct ShardOutcome {
    index: usize,
    records: Vec<AuditRecord>,
    summary: RunSummary,
}

fn process_shard(
    index: usize,
    path: &Path,
    matcher: Option<&Matcher>,
    config: &AuditConfig,
) -> ShardOutcome {
    let shard_name = path.display().to_string();
    let mut summary = RunSummary::default();
    let mut records = Vec::new();

    let mut fail = |record: usize, message: String, summary: &mut RunSummary| {
        summary.shard_errors.push(ShardError {
            shard: shard_name.clone(),
            record,
            message,
        });
    };

    let reader = match open_wet(path) {
        Ok(r) => r,
        Err(e) => {
            fail(0, e.to_string(), &mut summary);
            return ShardOutcome {
                index,
                records,
                summary,
            };
        }
    };

    for (record_no, parsed) in reader.enumerate() {
        let record = match parsed {
            Ok(r) => r,
            Err(e) => {
                // A malformed record aborts this shard; others proceed.
                fail(record_no, e.to_string(), &mut summary);
                break;
            }
        };
        summary.records_read += 1;
        let doc = match record_to_document(&record) {
            Converted::Doc(doc) => doc,
            Converted::Skip => {
                summary.skipped_non_conversion += 1;
                continue;
            }
        };
        summary.decode_replacements += doc.replacements as u64;
        match classify_text(
            &doc.text,
            &config.target_lang,
            &config.profiles,
            config.max_distance,
        ) {
            Ok(LangDecision::Keep { .. }) => {}
            Ok(LangDecision::TooShort) => {
                summary.dropped_short += 1;
                continue;
            }
            Ok(LangDecision::WrongLanguage { .. }) => {
                summary.dropped_wrong_language += 1;
                continue;
            }
            Err(e) => {
                fail(record_no, e.to_string(), &mut summary);
                break;
            }
        }

        let tokens = tokenize(&doc.text);
        let mut audit = AuditRecord::new(&doc.record_id, &doc.url, tokens.len());
        if let Some(matcher) = matcher {
            audit = audit.with_hits(matcher.count_tokens(&tokens, config.counting_mode));
        }
        if let Some(classifier) = &config.classifier {
            match classifier.score_tokens(&tokens) {
                Ok(p) => audit.classifier_prob = Some(p),
                Err(e) => {
                    fail(record_no, e.to_string(), &mut summary);
                    break;
                }
            }
        }
        if let Some(lm) = &config.lm {
            // Retained documents have at least one token (the length gate
            // guarantees alphanumeric content), but stay defensive.
            match lm.perplexity(&tokens) {
                Ok(score) => audit.perplexity = Some(score.value),
                Err(e) => {
                    fail(record_no, e.to_string(), &mut summary);
                    break;
                }
            }
        }
        summary.retained += 1;
        records.push(audit);
    }

    ShardOutcome {
        index,
        records,
        summary,
    }
}

/// Run the full audit and write the sorted JSONL audit file plus a
/// `.meta.json` sidecar. Returns the run summary.
pub fn run_audit(config: &AuditConfig) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let matcher = if config.lexicons.is_empty() {
        None
    } else {
        Some(crate::lexicon::compile(&config.lexicons)?)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut outcomes: Vec<ShardOutcome> = pool.install(|| {
        use rayon::prelude::*;
        config
            .shards
            .par_iter()
            .enumerate()
            .map(|(index, path)| process_shard(index, path, matcher.as_ref(), config))
            .collect()
    });

    outcomes.sort_by_key(|o| o.index);
    let mut summary = RunSummary::default();
    // (record_id, shard index, within-shard position) is a total order
    // independent of worker scheduling.
    let mut keyed: Vec<(AuditRecord, usize, usize)> = Vec::new();
    for outcome in outcomes {
        summary.absorb(outcome.summary);
        for (pos, record) in outcome.records.into_iter().enumerate() {
            keyed.push((record, outcome.index, pos));
        }
    }
    if config.strict {
        if let Some(err) = summary.shard_errors.first() {
            return Err(PipelineError::Shard {
                shard: err.shard.clone(),
                record: err.record,
                message: err.message.clone(),
            });
        }
    }
    keyed.sort_by(|a, b| {
        a.0.record_id
            .cmp(&b.0.record_id)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let records: Vec<AuditRecord> = keyed.into_iter().map(|(r, _, _)| r).collect();

    write_audit_file(&config.out, &records)?;
    let meta = AuditMeta {
        target_lang: config.target_lang.clone(),
        max_distance: config.max_distance,
        counting_mode: config.counting_mode.as_str().to_string(),
        tokenizer_version: TOKENIZER_VERSION.to_string(),
        lexicons: config
            .lexicons
            .iter()
            .map(|l| LexiconMeta {
                name: l.name().to_string(),
                patterns: l.patterns().len(),
                duplicates_dropped: l.duplicates_dropped(),
                sha256: l.source_sha256().map(str::to_string),
            })
            .collect(),
        classifier: config.classifier.as_ref().map(|c| c.label.clone()),
        lm: config.lm.as_ref().map(|lm| LmMeta {
            order: lm.order(),
            min_count: lm.min_count(),
            vocab_size: lm.vocab_size(),
            normalization: "per-token".to_string(),
        }),
        sample_seed: config.sample_seed,
        sample_rate: config.sample_rate,
        summary: summary.clone(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(meta_path(&config.out), meta_json)?;
    Ok(summary)
}

/// Sidecar path: `audit.jsonl` -> `audit.meta.json`.
pub fn meta_path(audit_path: &Path) -> PathBuf {
    let stem = audit_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audit".to_string());
    audit_path.with_file_name(format!("{stem}.meta.json"))
}

/// Audit line field names are fixed: `record_id`, `url`, `token_count`,
/// `hits.<lexicon>`, `classifier_prob`, `ext.<name>`, `perplexity`,
/// `bucket`. Absent metrics are omitted, never written as zero.
pub fn audit_record_to_json(record: &AuditRecord) -> Value {
    let mut map = Map::new();
    map.insert("record_id".to_string(), Value::from(record.record_id.clone()));
    map.insert("url".to_string(), Value::from(record.url.clone()));
    map.insert("token_count".to_string(), Value::from(record.token_count));
    for (name, &count) in &record.hits {
        map.insert(format!("hits.{name}"), Value::from(count));
    }
    if let Some(p) = record.classifier_prob {
        map.insert("classifier_prob".to_string(), Value::from(p));
    }
    for (name, &score) in &record.external {
        map.insert(format!("ext.{name}"), Value::from(score));
    }
    if let Some(p) = record.perplexity {
        map.insert("perplexity".to_string(), Value::from(p));
    }
    if let Some(b) = record.bucket {
        map.insert("bucket".to_string(), Value::from(b.as_str()));
    }
    Value::Object(map)
}

fn bad_line(line: usize, reason: &str) -> PipelineError {
    PipelineError::MalformedAudit {
        line,
        reason: reason.to_string(),
    }
}

pub fn audit_record_from_json(value: &Value, line: usize) -> Result<AuditRecord, PipelineError> {
    let map = value
        .as_object()
        .ok_or_else(|| bad_line(line, "not a JSON object"))?;
    let record_id = map
        .get("record_id")
        .and_then(Value::as_str)
        .ok_or_else(|| bad_line(line, "missing record_id"))?;
    let url = map.get("url").and_then(Value::as_str).unwrap_or("");
    let token_count = map
        .get("token_count")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad_line(line, "missing token_count"))? as usize;
    let mut record = AuditRecord::new(record_id, url, token_count);
    for (key, value) in map {
        if let Some(name) = key.strip_prefix("hits.") {
            let count = value
                .as_u64()
                .ok_or_else(|| bad_line(line, "hit count is not an integer"))?;
            record.hits.insert(name.to_string(), count);
        } else if let Some(name) = key.strip_prefix("ext.") {
            let score = value
                .as_f64()
                .ok_or_else(|| bad_line(line, "external score is not a number"))?;
            record.external.insert(name.to_string(), score);
        }
    }
    if let Some(v) = map.get("classifier_prob") {
        record.classifier_prob =
            Some(v.as_f64().ok_or_else(|| bad_line(line, "classifier_prob is not a number"))?);
    }
    if let Some(v) = map.get("perplexity") {
        record.perplexity =
            Some(v.as_f64().ok_or_else(|| bad_line(line, "perplexity is not a number"))?);
    }
    if let Some(v) = map.get("bucket") {
        let bucket = match v.as_str() {
            Some("high") => Bucket::High,
            Some("middle") => Bucket::Middle,
            Some("low") => Bucket::Low,
            _ => return Err(bad_line(line, "bucket is not high/middle/low")),
        };
        record.bucket = Some(bucket);
    }
    Ok(record)
}

pub fn write_audit_file(path: &Path, records: &[AuditRecord]) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, &audit_record_to_json(record))
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_audit_file(path: &Path) -> Result<Vec<AuditRecord>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| bad_line(i + 1, &format!("invalid JSON: {e}")))?;
        records.push(audit_record_from_json(&value, i + 1)?);
    }
    Ok(records)
}

/// Outcome of merging an external score file into an audit file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub matched: usize,
    /// Score-file ids with no audit record.
    pub unmatched: usize,
}

/// Parse a `record_id<TAB>score` file.
fn read_scores(path: &Path) -> Result<BTreeMap<String, f64>, PipelineError> {
    let raw = std::fs::read_to_string(path)?;
    let mut scores = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| PipelineError::MalformedScores {
                line: i + 1,
                reason: "missing tab separator".to_string(),
            })?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| PipelineError::MalformedScores {
                line: i + 1,
                reason: format!("`{score}` is not a number"),
            })?;
        if !score.is_finite() {
            return Err(PipelineError::MalformedScores {
                line: i + 1,
                reason: "score is not finite".to_string(),
            });
        }
        scores.insert(id.to_string(), score);
    }
    Ok(scores)
}

/// Add an external per-document metric column (`ext.<name>`) to an audit
/// file in place. Ids in the score file with no audit record are counted,
/// not errors.
pub fn merge_external_scores(
    audit_path: &Path,
    scores_path: &Path,
    metric_name: &str,
) -> Result<MergeSummary, PipelineError> {
    let mut records = read_audit_file(audit_path)?;
    if records.iter().any(|r| r.external.contains_key(metric_name)) {
        return Err(PipelineError::DuplicateMetricName(metric_name.to_string()));
    }
    let mut scores = read_scores(scores_path)?;
    let mut summary = MergeSummary::default();
    for record in &mut records {
        if let Some(score) = scores.remove(&record.record_id) {
            record.external.insert(metric_name.to_string(), score);
            summary.matched += 1;
        }
    }
    summary.unmatched = scores.len();
    write_audit_file(audit_path, &records)?;
    Ok(summary)
}
