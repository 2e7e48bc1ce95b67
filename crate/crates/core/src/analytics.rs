//! Aggregation of per-document metrics: perplexity tercile buckets,
//! per-bucket flag-rate tables and the Pearson correlation matrix between
//! metrics.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::HitCounts;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("need at least 3 records with perplexity to bucket, found {0}")]
    TooFewRecords(usize),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series too short: {0} points")]
    TooShort(usize),
}

/// Perplexity tercile. Lower perplexity means closer to the reference
/// domain, hence higher quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    High,
    Middle,
    Low,
}

impl Bucket {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bucket::High => "high",
            Bucket::Middle => "middle",
            Bucket::Low => "low",
        }
    }
}

/// All per-document metrics for one audited page. Absent metrics stay
/// absent; they are never coerced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub record_id: String,
    pub url: String,
    pub token_count: usize,
    pub hits: BTreeMap<String, u64>,
    pub classifier_prob: Option<f64>,
    pub external: BTreeMap<String, f64>,
    pub perplexity: Option<f64>,
    pub bucket: Option<Bucket>,
}

impl AuditRecord {
    pub fn new(record_id: &str, url: &str, token_count: usize) -> Self {
        AuditRecord {
            record_id: record_id.to_string(),
            url: url.to_string(),
            token_count,
            hits: BTreeMap::new(),
            classifier_prob: None,
            external: BTreeMap::new(),
            perplexity: None,
            bucket: None,
        }
    }

    pub fn with_hits(mut self, hits: HitCounts) -> Self {
        self.hits = hits.into_map();
        self
    }

    /// Metric lookup by report column name: `perplexity`,
    /// `classifier_prob`, `token_count`, `hits.<lexicon>` or `ext.<name>`.
    pub fn metric(&self, name: &str) -> Option<f64> {
        if name == "perplexity" {
            return self.perplexity;
        }
        if name == "classifier_prob" {
            return self.classifier_prob;
        }
        if name == "token_count" {
            return Some(self.token_count as f64);
        }
        if let Some(lexicon) = name.strip_prefix("hits.") {
            return self.hits.get(lexicon).map(|&c| c as f64);
        }
        if let Some(ext) = name.strip_prefix("ext.") {
            return self.external.get(ext).copied();
        }
        None
    }
}

/// Assign perplexity terciles in place: records are ranked ascending by
/// (perplexity, record_id) and split into three buckets whose sizes differ
/// by at most one, remainder going to the earlier buckets. Records without
/// perplexity are left unassigned. Record order is not changed.
pub fn assign_buckets(records: &mut [AuditRecord]) -> Result<(), AnalyticsError> {
    let mut scored: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].perplexity.is_some())
        .collect();
    if scored.len() < 3 {
        return Err(AnalyticsError::TooFewRecords(scored.len()));
    }
    scored.sort_by(|&a, &b| {
        let pa = records[a].perplexity.unwrap();
        let pb = records[b].perplexity.unwrap();
        pa.total_cmp(&pb)
            .then_with(|| records[a].record_id.cmp(&records[b].record_id))
    });

    let n = scored.len();
    let base = n / 3;
    let rem = n % 3;
    let high_end = base + usize::from(rem >= 1);
    let middle_end = high_end + base + usize::from(rem >= 2);
    for (rank, &idx) in scored.iter().enumerate() {
        records[idx].bucket = Some(if rank < high_end {
            Bucket::High
        } else if rank < middle_end {
            Bucket::Middle
        } else {
            Bucket::Low
        });
    }
    Ok(())
}

/// What a table row measures and the threshold it applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub label: String,
    pub source: MetricSource,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum MetricSource {
    /// Hit count of a named lexicon; threshold compares the count.
    LexiconHits(String),
    /// Classifier probability; threshold compares the probability.
    ClassifierProb,
    /// Ingested external score; threshold compares the score.
    External(String),
}

impl MetricSpec {
    pub fn lexicon(name: &str, threshold: u64) -> Self {
        MetricSpec {
            label: format!("{threshold}+ {name} n-grams"),
            source: MetricSource::LexiconHits(name.to_string()),
            threshold: threshold as f64,
        }
    }

    pub fn classifier(label: &str, threshold: f64) -> Self {
        MetricSpec {
            label: format!("hate speech ({label})"),
            source: MetricSource::ClassifierProb,
            threshold,
        }
    }

    pub fn external(name: &str, threshold: f64) -> Self {
        MetricSpec {
            label: format!("ext ({name})"),
            source: MetricSource::External(name.to_string()),
            threshold,
        }
    }

    fn meets(&self, record: &AuditRecord) -> bool {
        let value = match &self.source {
            MetricSource::LexiconHits(name) => record.hits.get(name).map(|&c| c as f64),
            MetricSource::ClassifierProb => record.classifier_prob,
            MetricSource::External(name) => record.external.get(name).copied(),
        };
        value.is_some_and(|v| v >= self.threshold)
    }

    /// The metric must exist somewhere in the record set, otherwise the
    /// row is a typo.
    fn known_in(&self, records: &[AuditRecord]) -> bool {
        match &self.source {
            MetricSource::LexiconHits(name) => records.iter().any(|r| r.hits.contains_key(name)),
            MetricSource::ClassifierProb => records.iter().any(|r| r.classifier_prob.is_some()),
            MetricSource::External(name) => {
                records.iter().any(|r| r.external.contains_key(name))
            }
        }
    }
}

/// Report columns: the whole sample plus the three quality buckets.
pub const COLUMNS: [&str; 4] = ["entire", "high", "middle", "low"];

/// Per-column counts for one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub threshold: f64,
    /// Flagged-document count per column, keyed like [`COLUMNS`].
    pub flagged: BTreeMap<String, u64>,
    /// flagged / column denominator; 0 for an empty column.
    pub rates: BTreeMap<String, f64>,
}

/// The per-bucket flag-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    /// Document count per column.
    pub denominators: BTreeMap<String, u64>,
    pub rows: Vec<BucketRow>,
}

fn column_of(record: &AuditRecord) -> Option<&'static str> {
    record.bucket.map(|b| match b {
        Bucket::High => "high",
        Bucket::Middle => "middle",
        Bucket::Low => "low",
    })
}

/// Compute flag rates per metric spec and column. Every rate is exactly
/// flagged / denominator for its column; documents lacking a metric are
/// simply never flagged by it.
pub fn bucket_rates(
    records: &[AuditRecord],
    specs: &[MetricSpec],
) -> Result<BucketTable, AnalyticsError> {
    for spec in specs {
        if !records.is_empty() && !spec.known_in(records) {
            return Err(AnalyticsError::UnknownMetric(spec.label.clone()));
        }
    }
    let mut denominators: BTreeMap<String, u64> =
        COLUMNS.iter().map(|&c| (c.to_string(), 0)).collect();
    for record in records {
        *denominators.get_mut("entire").unwrap() += 1;
        if let Some(col) = column_of(record) {
            *denominators.get_mut(col).unwrap() += 1;
        }
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut flagged: BTreeMap<String, u64> =
            COLUMNS.iter().map(|&c| (c.to_string(), 0)).collect();
        for record in records.iter().filter(|r| spec.meets(r)) {
            *flagged.get_mut("entire").unwrap() += 1;
            if let Some(col) = column_of(record) {
                *flagged.get_mut(col).unwrap() += 1;
            }
        }
        let rates = COLUMNS
            .iter()
            .map(|&c| {
                let d = denominators[c];
                let f = flagged[c];
                let rate = if d == 0 { 0.0 } else { f as f64 / d as f64 };
                (c.to_string(), rate)
            })
            .collect();
        rows.push(BucketRow {
            label: spec.label.clone(),
            threshold: spec.threshold,
            flagged,
            rates,
        });
    }
    Ok(BucketTable {
        denominators,
        rows,
    })
}

/// Two-pass Pearson correlation: means first, then centered moments.
/// `Ok(None)` when either series is constant (r is undefined there).
pub fn pearson<F: Float>(x: &[F], y: &[F]) -> Result<Option<F>, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalyticsError::TooShort(x.len()));
    }
    let n = F::from(x.len()).unwrap();
    let mean_x = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let mean_y = y.iter().fold(F::zero(), |a, &v| a + v) / n;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Pairwise Pearson correlations between named metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<F> {
    pub metrics: Vec<String>,
    /// `values[i][j]` = r between metrics i and j; `None` where undefined
    /// (constant series or too few paired observations).
    pub values: Vec<Vec<Option<F>>>,
    /// Records excluded from each cell because one of the two metrics was
    /// absent.
    pub excluded: Vec<Vec<usize>>,
}

impl<F: Float> CorrelationMatrix<F> {
    pub fn get(&self, a: &str, b: &str) -> Option<F> {
        let i = self.metrics.iter().position(|m| m == a)?;
        let j = self.metrics.iter().position(|m| m == b)?;
        self.values[i][j]
    }
}

/// Correlate every metric pair over the records where both are present
/// (pairwise exclusion; absent is not zero).
pub fn correlation_matrix(
    records: &[AuditRecord],
    metric_names: &[String],
) -> Result<CorrelationMatrix<f64>, AnalyticsError> {
    for name in metric_names {
        if !records.iter().any(|r| r.metric(name).is_some()) {
            return Err(AnalyticsError::UnknownMetric(name.clone()));
        }
    }
    // Accumulate in record-id order so the result is a function of the
    // record set, not of input order (float addition is order-sensitive).
    let mut ordered: Vec<&AuditRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.record_id.cmp(&b.record_id).then_with(|| a.url.cmp(&b.url)));
    let series: Vec<Vec<Option<f64>>> = metric_names
        .iter()
        .map(|name| ordered.iter().map(|r| r.metric(name)).collect())
        .collect();

    let k = metric_names.len();
    let mut values = vec![vec![None; k]; k];
    let mut excluded = vec![vec![0usize; k]; k];
    for i in 0..k {
        for j in i..k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut dropped = 0;
            for (a, b) in series[i].iter().zip(&series[j]) {
                match (a, b) {
                    (Some(x), Some(y)) => {
                        xs.push(*x);
                        ys.push(*y);
                    }
                    _ => dropped += 1,
                }
            }
            let r = if xs.len() < 2 {
                None
            } else {
                pearson(&xs, &ys)?
            };
            values[i][j] = r;
            values[j][i] = r;
            excluded[i][j] = dropped;
            excluded[j][i] = dropped;
        }
    }
    Ok(CorrelationMatrix {
        metrics: metric_names.to_vec(),
        values,
        excluded,
    })
}

/// Write the rate table as CSV: label column then one column per bucket.
/// The middle bucket is computed but reported optionally, matching the
/// published table layout.
pub fn write_bucket_csv<W: std::io::Write>(
    table: &BucketTable,
    include_middle: bool,
    out: &mut W,
) -> std::io::Result<()> {
    let columns: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|&c| include_middle || c != "middle")
        .collect();
    write!(out, "metric")?;
    for col in &columns {
        write!(out, ",{col}")?;
    }
    writeln!(out)?;
    for row in &table.rows {
        write!(out, "{}", csv_escape(&row.label))?;
        for col in &columns {
            write!(out, ",{}", row.rates[*col])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Write the correlation matrix as CSV; undefined cells are left empty.
pub fn write_correlation_csv<W: std::io::Write>(
    matrix: &CorrelationMatrix<f64>,
    out: &mut W,
) -> std::io::Result<()> {
    write!(out, "metric")?;
    for m in &matrix.metrics {
        write!(out, ",{}", csv_escape(m))?;
    }
    writeln!(out)?;
    for (i, m) in matrix.metrics.iter().enumerate() {
        write!(out, "{}", csv_escape(m))?;
        for j in 0..matrix.metrics.len() {
            match matrix.values[i][j] {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
