//! Shard manifests and deterministic sampling.
//!
//! A manifest lists shard paths one per line (`#` comments ignored). The
//! sampler picks `floor(rate * N)` shards via a seeded Fisher-Yates prefix
//! so the selection is reproducible and its size exact.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("sampling rate {0} is outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("duplicate shard id `{0}` in manifest")]
    DuplicateShard(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Ordered list of unique shard ids, in the order read from the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardManifest {
    shard_ids: Vec<String>,
}

impl ShardManifest {
    pub fn new(shard_ids: Vec<String>) -> Result<Self, ManifestError> {
        for (i, id) in shard_ids.iter().enumerate() {
            if shard_ids[..i].contains(id) {
                return Err(ManifestError::DuplicateShard(id.clone()));
            }
        }
        Ok(ShardManifest { shard_ids })
    }

    /// Parse manifest text: one shard path per line, blank lines and `#`
    /// comments ignored.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let ids = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        ShardManifest::new(ids)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        ShardManifest::parse(&std::fs::read_to_string(path)?)
    }

    pub fn shard_ids(&self) -> &[String] {
        &self.shard_ids
    }

    pub fn len(&self) -> usize {
        self.shard_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shard_ids.is_empty()
    }

    /// Select exactly `floor(rate * N)` shard ids with a seeded uniform
    /// shuffle, returning them in original manifest order. Deterministic for
    /// a fixed (manifest, rate, seed).
    pub fn sample(&self, rate: f64, seed: u64) -> Result<ShardManifest, ManifestError> {
        if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
            return Err(ManifestError::RateOutOfRange(rate));
        }
        let n = self.shard_ids.len();
        // The epsilon absorbs binary representation error in decimal rates
        // (e.g. 0.29 * 100 < 29 in f64) so the count is the true floor.
        let take = ((rate * n as f64) + 1e-9).floor() as usize;
        let take = take.min(n);

        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        // Fisher-Yates, stopping once the prefix we keep is settled.
        for i in 0..take {
            let j = rng.gen_range(i..n);
            indices.swap(i, j);
        }
        let mut chosen = indices[..take].to_vec();
        chosen.sort_unstable();
        Ok(ShardManifest {
            shard_ids: chosen.iter().map(|&i| self.shard_ids[i].clone()).collect(),
        })
    }
}
