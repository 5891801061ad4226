//! Edge-side sample scoring and top-k selection.
//!
//! Each sample in the current window is scored on two axes: adaptability
//! (Shannon entropy of the student's class distribution — an uncertain
//! prediction means the sample is informative for retraining) and
//! timeliness (a sigmoid weight on the sample's age relative to the
//! window size, favoring recency). The weighted sum is the quality score
//! used to sort the window and keep the top `ceil(keep_fraction * n)`
//! samples for upload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EdgeId, FilterConfig, InferenceOutput, Sample, ScoredSample};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("cache is empty")]
    EmptyCache,
    #[error("window_seconds must be positive, got {0}")]
    NonPositiveWindow(f64),
    #[error("sample seq {got} does not increase over previous seq {prev}")]
    NonMonotonicSeq { prev: u64, got: u64 },
    #[error("sample belongs to edge {got}, cache belongs to {expected}")]
    WrongEdge { expected: EdgeId, got: EdgeId },
}

/// Per-window cache of (sample, inference output) pairs for one edge.
/// Entries are kept in strictly increasing `seq` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterCache {
    edge_id: EdgeId,
    entries: Vec<(Sample, InferenceOutput)>,
    window_start: f64,
}

impl FilterCache {
    pub fn new(edge_id: EdgeId) -> Self {
        FilterCache {
            edge_id,
            entries: Vec::new(),
            window_start: 0.0,
        }
    }

    /// Rebuilds a cache from unordered entries; sorts by `seq`.
    pub fn from_entries(
        edge_id: EdgeId,
        mut entries: Vec<(Sample, InferenceOutput)>,
        window_start: f64,
    ) -> Result<Self, FilterError> {
        entries.sort_by_key(|(s, _)| s.seq());
        let mut cache = FilterCache {
            edge_id,
            entries: Vec::new(),
            window_start,
        };
        for (s, o) in entries {
            cache.push(s, o)?;
        }
        Ok(cache)
    }

    pub fn push(&mut self, sample: Sample, output: InferenceOutput) -> Result<(), FilterError> {
        if sample.edge_id() != &self.edge_id {
            return Err(FilterError::WrongEdge {
                expected: self.edge_id.clone(),
                got: sample.edge_id().clone(),
            });
        }
        if let Some((last, _)) = self.entries.last() {
            if sample.seq() <= last.seq() {
                return Err(FilterError::NonMonotonicSeq {
                    prev: last.seq(),
                    got: sample.seq(),
                });
            }
        }
        self.entries.push((sample, output));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn edge_id(&self) -> &EdgeId {
        &self.edge_id
    }

    /// Drops all entries and starts the next window at `now`.
    pub fn clear(&mut self, now: f64) {
        self.entries.clear();
        self.window_start = now;
    }
}

/// Shannon entropy of the class distribution, natural log, with the
/// `0 * ln 0 := 0` convention. Result lies in `[0, ln C]`.
pub fn adaptability_score(output: &InferenceOutput) -> f64 {
    output
        .probs()
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Sigmoid weight on sample age relative to the window size.
///
/// `age_seconds` is `now - timestamp`, so the most recent sample has age
/// 0 and scores 0.5 either way. With `decay_toward_past = true` (the
/// default) the score is `1 / (1 + exp(age / window))`, strictly
/// decreasing in age; `false` keeps the exponent sign as
/// `1 / (1 + exp(-age / window))`, under which older samples score
/// higher.
pub fn timeliness_score(
    age_seconds: f64,
    window_seconds: f64,
    decay_toward_past: bool,
) -> Result<f64, FilterError> {
    if !(window_seconds.is_finite() && window_seconds > 0.0) {
        return Err(FilterError::NonPositiveWindow(window_seconds));
    }
    let x = age_seconds / window_seconds;
    let exponent = if decay_toward_past { x } else { -x };
    // The sigmoid saturates to exactly 0.0/1.0 in f64 for |x| beyond ~745;
    // clamp into the open interval so the score stays a valid timeliness.
    Ok((1.0 / (1.0 + exponent.exp())).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16))
}

/// Weighted sum of the two scores: `alpha * adaptability + beta * timeliness`.
pub fn quality_score(adaptability: f64, timeliness: f64, cfg: &FilterConfig) -> f64 {
    cfg.alpha * adaptability + cfg.beta * timeliness
}

/// Number of samples kept for a window of `n` entries: `ceil(k * n)`,
/// never less than 1.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * n as f64).ceil() as usize).clamp(1, n)
}

/// Sorts descending by quality (ties: higher seq, i.e. more recent,
/// first) and truncates to the keep count. The comparison key is total
/// over distinct seqs, so the result does not depend on input order.
pub fn select_top(mut scored: Vec<ScoredSample>, keep_fraction: f64) -> Vec<ScoredSample> {
    let keep = keep_count(scored.len(), keep_fraction);
    scored.sort_by(|a, b| {
        b.quality()
            .partial_cmp(&a.quality())
            .expect("quality scores are finite")
            .then_with(|| b.sample().seq().cmp(&a.sample().seq()))
    });
    scored.truncate(keep);
    scored
}

/// Scores every cached entry at one instant, returns the top
/// `ceil(keep_fraction * n)` by quality, and leaves the cache cleared for
/// the next window.
pub fn filter_window(
    cache: &mut FilterCache,
    cfg: &FilterConfig,
    now: f64,
) -> Result<Vec<ScoredSample>, FilterError> {
    if cache.is_empty() {
        return Err(FilterError::EmptyCache);
    }
    let entries = std::mem::take(&mut cache.entries);
    cache.window_start = now;

    let mut scored = Vec::with_capacity(entries.len());
    for (sample, output) in entries {
        let adaptability = adaptability_score(&output);
        let age = now - sample.timestamp();
        let timeliness = timeliness_score(age, cfg.window_seconds, cfg.decay_toward_past)?;
        let s = ScoredSample::new(sample, output, adaptability, timeliness, cfg)
            .expect("scores computed from valid inputs are valid");
        scored.push(s);
    }
    Ok(select_top(scored, cfg.keep_fraction))
}
