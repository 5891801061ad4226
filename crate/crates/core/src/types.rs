//! Shared domain types. Construction validates every invariant; all types
//! are immutable after construction and safe to move across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failures raised by the constructors in this module.
#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("probability vector is empty")]
    EmptyVector,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probability vector sums to zero")]
    ZeroSum,
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("timestamp {0} is negative or non-finite")]
    BadTimestamp(f64),
    #[error("feature vector is empty")]
    EmptyFeatures,
    #[error("quality {stored} does not match alpha*adaptability + beta*timeliness = {expected}")]
    QualityMismatch { stored: f64, expected: f64 },
    #[error("invalid config field {field}: {reason}")]
    BadConfig {
        field: &'static str,
        reason: &'static str,
    },
    #[error("trainable update has length {got}, expected {expected}")]
    TrainableLength { expected: usize, got: usize },
}

/// Opaque identifier for one edge device.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(String);

impl EdgeId {
    pub fn new(id: impl Into<String>) -> Self {
        EdgeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EdgeId {
    fn from(s: &str) -> Self {
        EdgeId::new(s)
    }
}

/// One observation from a drifting stream.
///
/// `true_class` is generator-known ground truth: hidden from the student,
/// visible to the stream generator and the labeling teacher. `seq` is
/// strictly increasing and `timestamp` non-decreasing per edge; both are
/// enforced where samples accumulate (cache, generator), since they are
/// cross-sample invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    edge_id: EdgeId,
    seq: u64,
    timestamp: f64,
    features: Vec<f64>,
    true_class: usize,
}

impl Sample {
    pub fn new(
        edge_id: EdgeId,
        seq: u64,
        timestamp: f64,
        features: Vec<f64>,
        true_class: usize,
    ) -> Result<Self, TypeError> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(TypeError::BadTimestamp(timestamp));
        }
        if features.is_empty() {
            return Err(TypeError::EmptyFeatures);
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(Sample {
            edge_id,
            seq,
            timestamp,
            features,
            true_class,
        })
    }

    pub fn edge_id(&self) -> &EdgeId {
        &self.edge_id
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn true_class(&self) -> usize {
        self.true_class
    }
}

/// Class probability vector plus the predicted class.
///
/// `predicted` is always the argmax of `probs`, ties broken by lowest
/// class index, and `probs` sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    probs: Vec<f64>,
    predicted: usize,
}

impl InferenceOutput {
    /// Builds an output from a non-negative weight vector, normalizing it.
    ///
    /// Accepts already-normalized probabilities unchanged (up to the
    /// division by their sum) and raw non-negative scores otherwise.
    pub fn validate_probs(v: &[f64]) -> Result<Self, TypeError> {
        if v.is_empty() {
            return Err(TypeError::EmptyVector);
        }
        for (i, &x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(TypeError::NonFinite(i));
            }
            if x < 0.0 {
                return Err(TypeError::NegativeEntry { index: i, value: x });
            }
        }
        let sum: f64 = v.iter().sum();
        if sum == 0.0 {
            return Err(TypeError::ZeroSum);
        }
        let probs: Vec<f64> = v.iter().map(|x| x / sum).collect();
        let predicted = argmax_lowest(&probs);
        Ok(InferenceOutput { probs, predicted })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn predicted(&self) -> usize {
        self.predicted
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }
}

/// Argmax with lowest-index tie-break.
pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weights balancing adaptability and timeliness, plus the upload budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub keep_fraction: f64,
    pub window_seconds: f64,
    /// Default `true`: recent samples score higher (flipped exponent
    /// sign). `false` keeps the literal formula, under which older
    /// samples score higher.
    pub decay_toward_past: bool,
}

impl FilterConfig {
    pub fn new(
        alpha: f64,
        beta: f64,
        keep_fraction: f64,
        window_seconds: f64,
    ) -> Result<Self, TypeError> {
        let cfg = FilterConfig {
            alpha,
            beta,
            keep_fraction,
            window_seconds,
            decay_toward_past: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(TypeError::BadConfig {
                field: "alpha",
                reason: "must be finite and non-negative",
            });
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(TypeError::BadConfig {
                field: "beta",
                reason: "must be finite and non-negative",
            });
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(TypeError::BadConfig {
                field: "keep_fraction",
                reason: "must be in (0, 1]",
            });
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(TypeError::BadConfig {
                field: "window_seconds",
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: 1.0,
            beta: 1.0,
            keep_fraction: 0.7,
            window_seconds: 30.0,
            decay_toward_past: true,
        }
    }
}

/// A sample together with its inference output and quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    sample: Sample,
    output: InferenceOutput,
    adaptability: f64,
    timeliness: f64,
    quality: f64,
}

impl ScoredSample {
    /// Quality is computed here, never passed in, so the
    /// `quality = alpha*adaptability + beta*timeliness` invariant holds by
    /// construction.
    pub fn new(
        sample: Sample,
        output: InferenceOutput,
        adaptability: f64,
        timeliness: f64,
        cfg: &FilterConfig,
    ) -> Result<Self, TypeError> {
        if !adaptability.is_finite() || adaptability < 0.0 {
            return Err(TypeError::BadConfig {
                field: "adaptability",
                reason: "must be finite and non-negative",
            });
        }
        if !timeliness.is_finite() || timeliness <= 0.0 || timeliness >= 1.0 {
            return Err(TypeError::BadConfig {
                field: "timeliness",
                reason: "must be in (0, 1)",
            });
        }
        let quality = cfg.alpha * adaptability + cfg.beta * timeliness;
        Ok(ScoredSample {
            sample,
            output,
            adaptability,
            timeliness,
            quality,
        })
    }

    /// Recompute check for the quality invariant, used by audits and tests.
    pub fn check_quality(&self, cfg: &FilterConfig) -> Result<(), TypeError> {
        let expected = cfg.alpha * self.adaptability + cfg.beta * self.timeliness;
        if (self.quality - expected).abs() > 1e-12 {
            return Err(TypeError::QualityMismatch {
                stored: self.quality,
                expected,
            });
        }
        Ok(())
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn output(&self) -> &InferenceOutput {
        &self.output
    }

    pub fn adaptability(&self) -> f64 {
        self.adaptability
    }

    pub fn timeliness(&self) -> f64 {
        self.timeliness
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn into_parts(self) -> (Sample, InferenceOutput, f64) {
        (self.sample, self.output, self.quality)
    }
}

/// The tuned hyperparameter subset: learning rate, momentum, L2 decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl HyperParams {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self, TypeError> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(TypeError::BadConfig {
                field: "learning_rate",
                reason: "must be finite and positive",
            });
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(TypeError::BadConfig {
                field: "momentum",
                reason: "must be in [0, 1)",
            });
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(TypeError::BadConfig {
                field: "weight_decay",
                reason: "must be finite and non-negative",
            });
        }
        Ok(HyperParams {
            learning_rate,
            momentum,
            weight_decay,
        })
    }
}

/// Model parameters split into a frozen backbone and a trainable head.
///
/// The frozen partition has no mutator: it is bitwise identical for the
/// lifetime of the value. `version` counts applied head updates and moves
/// in steps of exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    frozen: Vec<f64>,
    trainable: Vec<f64>,
    version: u64,
}

impl ModelParams {
    pub fn new(frozen: Vec<f64>, trainable: Vec<f64>) -> Result<Self, TypeError> {
        if let Some(i) = frozen.iter().chain(trainable.iter()).position(|x| !x.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(ModelParams {
            frozen,
            trainable,
            version: 0,
        })
    }

    pub fn frozen(&self) -> &[f64] {
        &self.frozen
    }

    pub fn trainable(&self) -> &[f64] {
        &self.trainable
    }

    /// Mutable view of the trainable partition only. There is
    /// deliberately no `frozen_mut`.
    pub fn trainable_mut(&mut self) -> &mut [f64] {
        &mut self.trainable
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Replaces the trainable partition with dispatched values and bumps
    /// the version by one.
    pub fn apply_trainable(&mut self, values: &[f64]) -> Result<(), TypeError> {
        if values.len() != self.trainable.len() {
            return Err(TypeError::TrainableLength {
                expected: self.trainable.len(),
                got: values.len(),
            });
        }
        self.trainable.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// FNV-1a over the little-endian bytes of the frozen partition. Used
    /// by the registration handshake to prove edge and cloud share the
    /// same backbone.
    pub fn frozen_checksum(&self) -> u64 {
        fnv1a_f64(&self.frozen)
    }

    /// Bitwise equality of two float slices (exact, not approximate).
    pub fn bits_equal(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    }
}

pub(crate) fn fnv1a_f64(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    hash
}

/// One binary correctness record with its originating sequence index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub correct: bool,
    pub seq: u64,
}

impl AccuracyRecord {
    pub fn new(correct: bool, seq: u64) -> Self {
        AccuracyRecord { correct, seq }
    }

    pub fn as_count(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_probs_already_normalized() {
        let out = InferenceOutput::validate_probs(&[0.2, 0.8]).unwrap();
        assert_eq!(out.predicted(), 1);
        assert_eq!(out.probs(), &[0.2, 0.8]);
    }

    #[test]
    fn validate_probs_tie_breaks_lowest_index() {
        let out = InferenceOutput::validate_probs(&[0.5, 0.5]).unwrap();
        assert_eq!(out.predicted(), 0);
    }

    #[test]
    fn validate_probs_normalizes_raw_scores() {
        let out = InferenceOutput::validate_probs(&[2.0, 2.0, 4.0]).unwrap();
        assert_eq!(out.probs(), &[0.25, 0.25, 0.5]);
        assert_eq!(out.predicted(), 2);
    }

    #[test]
    fn validate_probs_rejects_bad_input() {
        assert_eq!(
            InferenceOutput::validate_probs(&[]),
            Err(TypeError::EmptyVector)
        );
        assert!(matches!(
            InferenceOutput::validate_probs(&[0.5, f64::NAN]),
            Err(TypeError::NonFinite(1))
        ));
        assert!(matches!(
            InferenceOutput::validate_probs(&[0.5, -0.1]),
            Err(TypeError::NegativeEntry { index: 1, .. })
        ));
        assert_eq!(
            InferenceOutput::validate_probs(&[0.0, 0.0]),
            Err(TypeError::ZeroSum)
        );
    }

    #[test]
    fn sample_construction_validates() {
        let ok = Sample::new(EdgeId::new("e0"), 0, 0.0, vec![1.0, 2.0], 1);
        assert!(ok.is_ok());
        assert!(Sample::new(EdgeId::new("e0"), 0, -1.0, vec![1.0], 0).is_err());
        assert!(Sample::new(EdgeId::new("e0"), 0, 0.0, vec![], 0).is_err());
        assert!(Sample::new(EdgeId::new("e0"), 0, 0.0, vec![f64::INFINITY], 0).is_err());
    }

    #[test]
    fn filter_config_bounds() {
        assert!(FilterConfig::new(1.0, 1.0, 0.7, 30.0).is_ok());
        assert!(FilterConfig::new(1.0, 1.0, 0.0, 30.0).is_err());
        assert!(FilterConfig::new(1.0, 1.0, 1.1, 30.0).is_err());
        assert!(FilterConfig::new(1.0, 1.0, 0.5, 0.0).is_err());
        assert!(FilterConfig::new(-1.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn hyperparams_bounds() {
        assert!(HyperParams::new(0.01, 0.9, 1e-4).is_ok());
        assert!(HyperParams::new(0.0, 0.9, 1e-4).is_err());
        assert!(HyperParams::new(0.01, 1.0, 1e-4).is_err());
        assert!(HyperParams::new(0.01, 0.9, -1.0).is_err());
    }

    #[test]
    fn scored_sample_quality_is_recomputable() {
        let cfg = FilterConfig::default();
        let sample = Sample::new(EdgeId::new("e0"), 3, 1.5, vec![0.0; 4], 2).unwrap();
        let output = InferenceOutput::validate_probs(&[0.25; 4]).unwrap();
        let scored = ScoredSample::new(sample, output, 1.2, 0.4, &cfg).unwrap();
        assert!((scored.quality() - (1.2 + 0.4)).abs() < 1e-15);
        scored.check_quality(&cfg).unwrap();
    }

    #[test]
    fn model_params_version_steps_by_one() {
        let mut p = ModelParams::new(vec![1.0, 2.0], vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.version(), 0);
        p.apply_trainable(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.version(), 1);
        assert_eq!(p.trainable(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            p.apply_trainable(&[1.0]),
            Err(TypeError::TrainableLength { expected: 3, got: 1 })
        ));
        assert_eq!(p.version(), 1);
    }

    #[test]
    fn frozen_checksum_tracks_bits() {
        let a = ModelParams::new(vec![1.0, -0.0], vec![]).unwrap();
        let b = ModelParams::new(vec![1.0, 0.0], vec![]).unwrap();
        // -0.0 and 0.0 differ bitwise, so checksums must differ.
        assert_ne!(a.frozen_checksum(), b.frozen_checksum());
    }

    #[test]
    fn serde_round_trips_preserve_structure() {
        let cfg = FilterConfig::default();
        let sample = Sample::new(EdgeId::new("edge-1"), 7, 2.25, vec![0.5, -1.5], 3).unwrap();
        let output = InferenceOutput::validate_probs(&[1.0, 3.0]).unwrap();
        let scored =
            ScoredSample::new(sample.clone(), output.clone(), 0.3, 0.6, &cfg).unwrap();
        let params = ModelParams::new(vec![0.1, 0.2], vec![0.3]).unwrap();
        let h = HyperParams::new(0.05, 0.9, 1e-4).unwrap();
        let rec = AccuracyRecord::new(true, 42);

        macro_rules! round_trip {
            ($value:expr, $ty:ty) => {{
                let json = serde_json::to_string(&$value).unwrap();
                let back: $ty = serde_json::from_str(&json).unwrap();
                assert_eq!(back, $value);
            }};
        }
        round_trip!(sample, Sample);
        round_trip!(output, InferenceOutput);
        round_trip!(scored, ScoredSample);
        round_trip!(cfg, FilterConfig);
        round_trip!(params, ModelParams);
        round_trip!(h, HyperParams);
        round_trip!(rec, AccuracyRecord);
    }
}
