//! Deterministic desk-scale stand-ins for the production models and
//! video workloads.
//!
//! The student is a frozen random projection (the "backbone") feeding a
//! relu hidden layer, with a trainable softmax-linear head — so the
//! "backbone frozen, head trainable" contract is structural, not merely
//! configured. Streams are piecewise-stationary Gaussian mixtures: each
//! scene has its own class-conditional means, and a scene boundary is a
//! data-drift event. The teacher is the generator's oracle, optionally
//! corrupted with a configurable error rate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::{LabeledSample, ModelError, TrainableModel};
use crate::types::{EdgeId, HyperParams, InferenceOutput, ModelParams, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("workload has no scenes")]
    NoScenes,
    #[error("scene {index}: {reason}")]
    BadScene { index: usize, reason: &'static str },
    #[error("scenes do not tile [0, total_seconds): {0}")]
    BadTiling(&'static str),
    #[error("invalid workload field {field}: {reason}")]
    BadField {
        field: &'static str,
        reason: &'static str,
    },
}

/// One stationary segment of a stream: class-conditional Gaussian means,
/// class priors, and isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_means: Vec<Vec<f64>>,
    pub class_priors: Vec<f64>,
    pub noise_scale: f64,
    pub start_time: f64,
    pub duration: f64,
}

impl SceneSpec {
    pub fn validate(&self, index: usize, feature_dim: usize) -> Result<(), WorkloadError> {
        let bad = |reason| WorkloadError::BadScene { index, reason };
        if self.class_means.is_empty() {
            return Err(bad("no classes"));
        }
        if self.class_means.len() != self.class_priors.len() {
            return Err(bad("means and priors disagree on class count"));
        }
        if self.class_means.iter().any(|m| m.len() != feature_dim) {
            return Err(bad("mean dimension does not match feature_dim"));
        }
        let prior_sum: f64 = self.class_priors.iter().sum();
        if self.class_priors.iter().any(|&p| !(p.is_finite() && p >= 0.0))
            || (prior_sum - 1.0).abs() > 1e-9
        {
            return Err(bad("priors must be non-negative and sum to 1"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(bad("noise_scale must be positive"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(bad("duration must be positive"));
        }
        Ok(())
    }

    /// Draws class means from `N(0, mean_scale^2 I)`; distinct draws give
    /// scenes that are far apart with overwhelming probability.
    pub fn with_random_means(
        rng: &mut ChaCha8Rng,
        class_count: usize,
        feature_dim: usize,
        mean_scale: f64,
        noise_scale: f64,
        start_time: f64,
        duration: f64,
    ) -> Self {
        let class_means = (0..class_count)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| mean_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        SceneSpec {
            class_means,
            class_priors: vec![1.0 / class_count as f64; class_count],
            noise_scale,
            start_time,
            duration,
        }
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }

    /// Draws one (features, class) pair from this scene's distribution.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut class = self.class_priors.len() - 1;
        for (c, &p) in self.class_priors.iter().enumerate() {
            acc += p;
            if u < acc {
                class = c;
                break;
            }
        }
        let features = self.class_means[class]
            .iter()
            .map(|m| m + self.noise_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (features, class)
    }

    /// Bayes-optimal class under this scene's generative model. Used as
    /// an independent oracle in tests.
    pub fn bayes_classify(&self, features: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, mean) in self.class_means.iter().enumerate() {
            let dist2: f64 = mean
                .iter()
                .zip(features)
                .map(|(m, x)| (x - m) * (x - m))
                .sum();
            let prior = self.class_priors[c];
            let score = if prior > 0.0 {
                prior.ln() - dist2 / (2.0 * self.noise_scale * self.noise_scale)
            } else {
                f64::NEG_INFINITY
            };
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        best
    }
}

/// An ordered list of scenes tiling `[0, total_seconds)`, plus sampling
/// rate and the generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub scenes: Vec<SceneSpec>,
    pub feature_dim: usize,
    pub samples_per_second: f64,
    pub total_seconds: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.scenes.is_empty() {
            return Err(WorkloadError::NoScenes);
        }
        if self.feature_dim == 0 {
            return Err(WorkloadError::BadField {
                field: "feature_dim",
                reason: "must be positive",
            });
        }
        if !(self.samples_per_second > 0.0) {
            return Err(WorkloadError::BadField {
                field: "samples_per_second",
                reason: "must be positive",
            });
        }
        if !(self.total_seconds > 0.0) {
            return Err(WorkloadError::BadField {
                field: "total_seconds",
                reason: "must be positive",
            });
        }
        for (i, scene) in self.scenes.iter().enumerate() {
            scene.validate(i, self.feature_dim)?;
        }
        if self.scenes[0].start_time != 0.0 {
            return Err(WorkloadError::BadTiling("first scene must start at 0"));
        }
        for pair in self.scenes.windows(2) {
            if (pair[0].end_time() - pair[1].start_time).abs() > 1e-9 {
                return Err(WorkloadError::BadTiling("gap or overlap between scenes"));
            }
        }
        let last_end = self.scenes.last().unwrap().end_time();
        if (last_end - self.total_seconds).abs() > 1e-9 {
            return Err(WorkloadError::BadTiling("scenes do not cover total_seconds"));
        }
        Ok(())
    }

    /// Convenience builder: `scene_count` equal-length scenes with seeded
    /// random means. Scene boundaries are the drift events.
    pub fn drifting(
        seed: u64,
        scene_count: usize,
        class_count: usize,
        feature_dim: usize,
        mean_scale: f64,
        noise_scale: f64,
        samples_per_second: f64,
        total_seconds: f64,
    ) -> Result<Self, WorkloadError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e5);
        let duration = total_seconds / scene_count.max(1) as f64;
        let scenes = (0..scene_count)
            .map(|i| {
                SceneSpec::with_random_means(
                    &mut rng,
                    class_count,
                    feature_dim,
                    mean_scale,
                    noise_scale,
                    i as f64 * duration,
                    duration,
                )
            })
            .collect();
        let spec = WorkloadSpec {
            scenes,
            feature_dim,
            samples_per_second,
            total_seconds,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn class_count(&self) -> usize {
        self.scenes[0].class_means.len()
    }

    fn scene_at(&self, t: f64) -> &SceneSpec {
        self.scenes
            .iter()
            .rev()
            .find(|s| t >= s.start_time)
            .unwrap_or(&self.scenes[0])
    }
}

/// Generates the full deterministic sample stream for one edge. Sample
/// `k` arrives at `k / samples_per_second`; `seq` is `k`.
pub fn generate_stream(spec: &WorkloadSpec, edge_id: &EdgeId) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = (spec.total_seconds * spec.samples_per_second).ceil() as u64;
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..count {
        let t = k as f64 / spec.samples_per_second;
        if t >= spec.total_seconds {
            break;
        }
        let scene = spec.scene_at(t);
        let (features, class) = scene.sample(&mut rng);
        out.push(
            Sample::new(edge_id.clone(), k, t, features, class)
                .expect("generated samples are valid"),
        );
    }
    out
}

/// The lightweight edge model: frozen projection, relu, trainable
/// softmax-linear head. The head layout is `class_count * hidden_dim`
/// row-major weights followed by `class_count` biases.
#[derive(Debug, Clone)]
pub struct StudentModel {
    params: ModelParams,
    feature_dim: usize,
    hidden_dim: usize,
    class_count: usize,
    velocity: Vec<f64>,
    mini_batch: usize,
    pub rng_seed: u64,
}

impl StudentModel {
    pub fn new(feature_dim: usize, hidden_dim: usize, class_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let frozen: Vec<f64> = (0..hidden_dim * feature_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // Zero head: the initial output is uniform over classes.
        let trainable = vec![0.0; class_count * hidden_dim + class_count];
        let params = ModelParams::new(frozen, trainable).expect("finite init");
        StudentModel {
            params,
            feature_dim,
            hidden_dim,
            class_count,
            velocity: vec![0.0; class_count * hidden_dim + class_count],
            mini_batch: 32,
            rng_seed: seed,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn trainable_len(&self) -> usize {
        self.class_count * self.hidden_dim + self.class_count
    }

    pub fn version(&self) -> u64 {
        self.params.version()
    }

    pub fn frozen_checksum(&self) -> u64 {
        self.params.frozen_checksum()
    }

    /// Applies a dispatched head update; bumps the parameter version.
    pub fn apply_trainable(&mut self, values: &[f64]) -> Result<(), crate::types::TypeError> {
        self.params.apply_trainable(values)
    }

    fn hidden(&self, features: &[f64]) -> Vec<f64> {
        let frozen = self.params.frozen();
        let mut h = vec![0.0; self.hidden_dim];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &frozen[j * self.feature_dim..(j + 1) * self.feature_dim];
            let pre: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum();
            *hj = pre.max(0.0);
        }
        h
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let w = self.params.trainable();
        let bias_offset = self.class_count * self.hidden_dim;
        let mut z = vec![0.0; self.class_count];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            *zc = row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + w[bias_offset + c];
        }
        z
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Full forward pass to a validated probability vector.
    pub fn infer(&self, features: &[f64]) -> Result<InferenceOutput, ModelError> {
        if features.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        let probs = Self::softmax(&self.logits(&self.hidden(features)));
        Ok(InferenceOutput::validate_probs(&probs).expect("softmax output is a distribution"))
    }

    /// Mean total loss (cross-entropy plus the L2 penalty
    /// `wd/2 * ||head||^2`) and its gradient w.r.t. the head, over a
    /// batch. The gradient is exactly what one SGD step consumes.
    pub fn loss_and_grad(
        &self,
        batch: &[LabeledSample],
        weight_decay: f64,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let head = self.params.trainable();
        let bias_offset = self.class_count * self.hidden_dim;
        let mut grad = vec![0.0; head.len()];
        let mut data_loss = 0.0;
        let inv_n = 1.0 / batch.len() as f64;
        for item in batch {
            if item.features.len() != self.feature_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: self.feature_dim,
                    got: item.features.len(),
                });
            }
            let hidden = self.hidden(&item.features);
            let probs = Self::softmax(&self.logits(&hidden));
            data_loss -= (probs[item.label].max(1e-300)).ln() * inv_n;
            for c in 0..self.class_count {
                let err = (probs[c] - if c == item.label { 1.0 } else { 0.0 }) * inv_n;
                let row = &mut grad[c * self.hidden_dim..(c + 1) * self.hidden_dim];
                for (g, h) in row.iter_mut().zip(&hidden) {
                    *g += err * h;
                }
                grad[bias_offset + c] += err;
            }
        }
        let mut total = data_loss;
        for (g, w) in grad.iter_mut().zip(head) {
            *g += weight_decay * w;
            total += 0.5 * weight_decay * w * w;
        }
        Ok((total, grad))
    }

    /// One pass of mini-batch SGD with momentum and L2 decay over
    /// `batch`, head only. Returns the mean cross-entropy over the pass.
    pub fn train_epoch_sgd(
        &mut self,
        batch: &[LabeledSample],
        h: &HyperParams,
    ) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut weighted_loss = 0.0;
        for chunk in batch.chunks(self.mini_batch) {
            let (loss, grad) = self.loss_and_grad(chunk, h.weight_decay)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss(loss));
            }
            weighted_loss += loss * chunk.len() as f64;
            let head = self.params.trainable_mut();
            for ((w, v), g) in head.iter_mut().zip(&mut self.velocity).zip(&grad) {
                *v = h.momentum * *v + g;
                *w -= h.learning_rate * *v;
            }
        }
        let mean = weighted_loss / batch.len() as f64;
        if !mean.is_finite() || self.params.trainable().iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFiniteLoss(mean));
        }
        Ok(mean)
    }

    /// Holdout accuracy against the given labels.
    pub fn accuracy(&self, holdout: &[LabeledSample]) -> f64 {
        if holdout.is_empty() {
            return 0.0;
        }
        let correct = holdout
            .iter()
            .filter(|s| {
                self.infer(&s.features)
                    .map(|o| o.predicted() == s.label)
                    .unwrap_or(false)
            })
            .count();
        correct as f64 / holdout.len() as f64
    }
}

impl TrainableModel for StudentModel {
    fn train_epoch(&mut self, batch: &[LabeledSample], h: &HyperParams) -> Result<f64, ModelError> {
        self.train_epoch_sgd(batch, h)
    }

    fn evaluate(&self, holdout: &[LabeledSample]) -> f64 {
        self.accuracy(holdout)
    }

    fn trainable_snapshot(&self) -> Vec<f64> {
        self.params.trainable().to_vec()
    }

    fn restore_trainable(&mut self, snapshot: &[f64]) {
        self.params.trainable_mut().copy_from_slice(snapshot);
    }

    fn begin_session(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Labels samples with the generator's ground truth, flipping to a
/// uniformly random other class with probability `error_rate`.
#[derive(Debug, Clone)]
pub struct Teacher {
    class_count: usize,
    error_rate: f64,
    rng: ChaCha8Rng,
}

impl Teacher {
    pub fn new(class_count: usize, error_rate: f64, seed: u64) -> Self {
        Teacher {
            class_count,
            error_rate: error_rate.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Perfect oracle: always returns the generator's class.
    pub fn perfect(class_count: usize) -> Self {
        Teacher::new(class_count, 0.0, 0)
    }

    pub fn label(&mut self, sample: &Sample) -> usize {
        self.label_class(sample.true_class())
    }

    /// Labels from a bare true class, for callers that reconstruct
    /// ground truth without a full `Sample` in hand.
    pub fn label_class(&mut self, true_class: usize) -> usize {
        if self.error_rate > 0.0 && self.rng.gen::<f64>() < self.error_rate {
            let offset = self.rng.gen_range(1..self.class_count);
            (true_class + offset) % self.class_count
        } else {
            true_class
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::trainer::{train_until_stop, TrainerConfig};

    fn labeled(samples: &[Sample]) -> Vec<LabeledSample> {
        samples
            .iter()
            .map(|s| LabeledSample::new(s.features().to_vec(), s.true_class()))
            .collect()
    }

    #[test]
    fn stream_is_deterministic_under_seed() {
        let spec = WorkloadSpec::drifting(9, 2, 6, 16, 2.0, 1.0, 2.0, 100.0).unwrap();
        let a = generate_stream(&spec, &EdgeId::new("e0"));
        let b = generate_stream(&spec, &EdgeId::new("e0"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        // seq strictly increasing, timestamps non-decreasing.
        for pair in a.windows(2) {
            assert!(pair[1].seq() > pair[0].seq());
            assert!(pair[1].timestamp() >= pair[0].timestamp());
        }
    }

    #[test]
    fn one_hot_priors_fix_the_class() {
        let mut spec = WorkloadSpec::drifting(3, 1, 6, 8, 2.0, 1.0, 2.0, 50.0).unwrap();
        let mut priors = vec![0.0; 6];
        priors[3] = 1.0;
        spec.scenes[0].class_priors = priors;
        for s in generate_stream(&spec, &EdgeId::new("e0")) {
            assert_eq!(s.true_class(), 3);
        }
    }

    #[test]
    fn scene_one_bayes_classifier_fails_on_scene_two() {
        // Monte-Carlo with the generator itself as the oracle: a Bayes
        // classifier for scene 1 is near-chance on scene 2's far means.
        let spec = WorkloadSpec::drifting(17, 2, 6, 16, 2.0, 1.0, 2.0, 400.0).unwrap();
        let stream = generate_stream(&spec, &EdgeId::new("e0"));
        let scene1 = &spec.scenes[0];
        let boundary = spec.scenes[1].start_time;
        let (mut hits, mut total) = (0usize, 0usize);
        for s in stream.iter().filter(|s| s.timestamp() >= boundary) {
            total += 1;
            if scene1.bayes_classify(s.features()) == s.true_class() {
                hits += 1;
            }
        }
        assert!(total > 300);
        let acc = hits as f64 / total as f64;
        assert!(acc < 1.0 / 6.0 + 0.1, "cross-scene Bayes accuracy {acc}");
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let model = StudentModel::new(16, 32, 6, 1);
        let out = model.infer(&vec![0.5; 16]).unwrap();
        for &p in out.probs() {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
        let entropy = crate::filter::adaptability_score(&out);
        assert!((entropy - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infer_rejects_wrong_dimension() {
        let model = StudentModel::new(16, 32, 6, 1);
        assert!(matches!(
            model.infer(&[0.0; 4]),
            Err(ModelError::DimensionMismatch { expected: 16, got: 4 })
        ));
    }

    #[test]
    fn scaling_logits_preserves_argmax() {
        let mut model = StudentModel::new(8, 16, 4, 2);
        let mut head = model.trainable_snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for w in head.iter_mut() {
            *w = rng.sample::<f64, _>(StandardNormal);
        }
        model.restore_trainable(&head);
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 4.0).collect();
        let before = model.infer(&x).unwrap().predicted();
        let scaled: Vec<f64> = head.iter().map(|w| w * 3.0).collect();
        model.restore_trainable(&scaled);
        assert_eq!(model.infer(&x).unwrap().predicted(), before);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut model = StudentModel::new(8, 16, 3, 5);
        let spec = WorkloadSpec::drifting(5, 1, 3, 8, 2.0, 1.0, 2.0, 30.0).unwrap();
        let set = labeled(&generate_stream(&spec, &EdgeId::new("e0")));
        let before = model.trainable_snapshot();
        let h = HyperParams::new(f64::MIN_POSITIVE, 0.9, 0.0).unwrap();
        let loss = model.train_epoch_sgd(&set, &h).unwrap();
        assert!(loss.is_finite());
        // lr is denormal-tiny: parameters must be unchanged to full precision.
        let after = model.trainable_snapshot();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-280);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let model = {
                let mut m = StudentModel::new(4, 8, 3, 100 + trial);
                let head: Vec<f64> = (0..m.trainable_len())
                    .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                m.restore_trainable(&head);
                m
            };
            let batch: Vec<LabeledSample> = (0..5)
                .map(|_| {
                    LabeledSample::new(
                        (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                        rng.gen_range(0..3),
                    )
                })
                .collect();
            let wd = 0.01;
            let (_, grad) = model.loss_and_grad(&batch, wd).unwrap();
            let head = model.trainable_snapshot();
            let eps = 1e-6;
            for i in 0..head.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let mut hp = head.clone();
                hp[i] += eps;
                plus.restore_trainable(&hp);
                hp[i] -= 2.0 * eps;
                minus.restore_trainable(&hp);
                let lp = plus.loss_and_grad(&batch, wd).unwrap().0;
                let lm = minus.loss_and_grad(&batch, wd).unwrap().0;
                let fd = (lp - lm) / (2.0 * eps);
                let denom = grad[i].abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((grad[i] - fd) / denom).abs() < 1e-5,
                    "component {i}: analytic {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn huge_weight_decay_shrinks_the_head() {
        let mut model = StudentModel::new(8, 16, 3, 5);
        let head: Vec<f64> = (0..model.trainable_len()).map(|i| (i % 5) as f64 - 2.0).collect();
        model.restore_trainable(&head);
        let spec = WorkloadSpec::drifting(5, 1, 3, 8, 2.0, 1.0, 2.0, 30.0).unwrap();
        let set = labeled(&generate_stream(&spec, &EdgeId::new("e0")));
        let h = HyperParams::new(0.05, 0.0, 5.0).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let before = norm(&model.trainable_snapshot());
        for _ in 0..50 {
            model.train_epoch_sgd(&set, &h).unwrap();
        }
        let after = norm(&model.trainable_snapshot());
        assert!(after < before * 0.2, "{after} !< {before} * 0.2");
    }

    #[test]
    fn training_converges_on_separable_two_class_set() {
        let spec = WorkloadSpec::drifting(21, 1, 2, 16, 3.0, 0.5, 2.0, 300.0).unwrap();
        let all = labeled(&generate_stream(&spec, &EdgeId::new("e0")));
        let (train, holdout) = all.split_at(500);
        let mut model = StudentModel::new(16, 32, 2, 4);
        let cfg = TrainerConfig::new(5, 1e9, HyperParams::new(0.05, 0.9, 1e-4).unwrap());
        let clock = SimClock::new();
        let report = train_until_stop(&mut model, train, &cfg, &clock).unwrap();
        assert!(report.best_eval > 0.9);
        assert!(model.accuracy(holdout) >= 0.95);
    }

    #[test]
    fn one_epoch_decreases_loss_for_small_lr() {
        let spec = WorkloadSpec::drifting(31, 1, 3, 16, 2.0, 1.0, 2.0, 100.0).unwrap();
        let set = labeled(&generate_stream(&spec, &EdgeId::new("e0")));
        let mut model = StudentModel::new(16, 32, 3, 6);
        let h = HyperParams::new(0.01, 0.0, 0.0).unwrap();
        let (before, _) = model.loss_and_grad(&set, 0.0).unwrap();
        model.train_epoch_sgd(&set, &h).unwrap();
        let (after, _) = model.loss_and_grad(&set, 0.0).unwrap();
        assert!(after < before, "loss {after} !< {before}");
    }

    #[test]
    fn frozen_partition_untouched_by_training() {
        let spec = WorkloadSpec::drifting(5, 1, 6, 16, 2.0, 1.0, 2.0, 100.0).unwrap();
        let set = labeled(&generate_stream(&spec, &EdgeId::new("e0")));
        let mut model = StudentModel::new(16, 32, 6, 5);
        let frozen_before = model.params().frozen().to_vec();
        let h = HyperParams::new(0.05, 0.9, 1e-4).unwrap();
        for _ in 0..100 {
            model.train_epoch_sgd(&set, &h).unwrap();
        }
        assert!(ModelParams::bits_equal(&frozen_before, model.params().frozen()));
    }

    #[test]
    fn teacher_error_rate_examples() {
        let spec = WorkloadSpec::drifting(5, 1, 6, 8, 2.0, 1.0, 2.0, 10.0).unwrap();
        let stream = generate_stream(&spec, &EdgeId::new("e0"));

        let mut perfect = Teacher::perfect(6);
        for s in &stream {
            assert_eq!(perfect.label(s), s.true_class());
        }

        let mut always_wrong = Teacher::new(2, 1.0, 3);
        for tc in [0usize, 1, 0, 1, 1] {
            assert_eq!(always_wrong.label_class(tc), 1 - tc);
        }

        let mut noisy = Teacher::new(6, 0.1, 7);
        let flips = (0..10_000)
            .filter(|i| noisy.label_class((i % 6) as usize) != (i % 6) as usize)
            .count();
        let rate = flips as f64 / 10_000.0;
        assert!((rate - 0.1).abs() < 0.01, "flip rate {rate}");
    }

    #[test]
    fn drift_premise_cross_scene_accuracy_drop() {
        let spec = WorkloadSpec::drifting(11, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let stream = generate_stream(&spec, &EdgeId::new("e0"));
        let boundary = spec.scenes[1].start_time;
        let scene_a: Vec<LabeledSample> = labeled(
            &stream
                .iter()
                .filter(|s| s.timestamp() < boundary)
                .cloned()
                .collect::<Vec<_>>(),
        );
        let scene_b: Vec<LabeledSample> = labeled(
            &stream
                .iter()
                .filter(|s| s.timestamp() >= boundary)
                .cloned()
                .collect::<Vec<_>>(),
        );
        let mut model = StudentModel::new(16, 32, 6, 4);
        let cfg = TrainerConfig::new(5, 1e9, HyperParams::new(0.05, 0.9, 1e-4).unwrap());
        let clock = SimClock::new();
        train_until_stop(&mut model, &scene_a, &cfg, &clock).unwrap();
        let acc_a = model.accuracy(&scene_a);
        let acc_b = model.accuracy(&scene_b);
        assert!(
            acc_a - acc_b >= 0.20,
            "expected >= 20-point drop, got A {acc_a} vs B {acc_b}"
        );
    }

    #[test]
    fn drift_premise_retraining_recovers() {
        let spec = WorkloadSpec::drifting(11, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let stream = generate_stream(&spec, &EdgeId::new("e0"));
        let boundary = spec.scenes[1].start_time;
        let scene_a: Vec<LabeledSample> = labeled(
            &stream
                .iter()
                .filter(|s| s.timestamp() < boundary)
                .cloned()
                .collect::<Vec<_>>(),
        );
        let scene_b_all: Vec<LabeledSample> = labeled(
            &stream
                .iter()
                .filter(|s| s.timestamp() >= boundary)
                .cloned()
                .collect::<Vec<_>>(),
        );
        let (retrain_set, holdout) = scene_b_all.split_at(200);

        let cfg = TrainerConfig::new(5, 1e9, HyperParams::new(0.05, 0.9, 1e-4).unwrap());
        let clock = SimClock::new();

        // Continuation: scene-A model retrained on 200 scene-B samples.
        let mut continued = StudentModel::new(16, 32, 6, 4);
        train_until_stop(&mut continued, &scene_a, &cfg, &clock).unwrap();
        train_until_stop(&mut continued, retrain_set, &cfg, &clock).unwrap();

        // From-scratch scene-B model on the same data.
        let mut fresh = StudentModel::new(16, 32, 6, 4);
        train_until_stop(&mut fresh, retrain_set, &cfg, &clock).unwrap();

        let acc_continued = continued.accuracy(holdout);
        let acc_fresh = fresh.accuracy(holdout);
        assert!(
            acc_continued >= acc_fresh - 0.05,
            "continued {acc_continued} vs fresh {acc_fresh}"
        );
    }

    #[test]
    fn out_of_scene_entropy_exceeds_in_scene_entropy() {
        // Mean-difference with a 5-seed majority.
        let mut wins = 0;
        for seed in 0..5u64 {
            let spec =
                WorkloadSpec::drifting(40 + seed, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
            let stream = generate_stream(&spec, &EdgeId::new("e0"));
            let boundary = spec.scenes[1].start_time;
            let scene_a: Vec<LabeledSample> = labeled(
                &stream
                    .iter()
                    .filter(|s| s.timestamp() < boundary)
                    .cloned()
                    .collect::<Vec<_>>(),
            );
            let mut model = StudentModel::new(16, 32, 6, 4 + seed);
            let cfg = TrainerConfig::new(5, 1e9, HyperParams::new(0.05, 0.9, 1e-4).unwrap());
            let clock = SimClock::new();
            train_until_stop(&mut model, &scene_a, &cfg, &clock).unwrap();

            let mean_entropy = |set: &[Sample]| {
                set.iter()
                    .map(|s| {
                        crate::filter::adaptability_score(&model.infer(s.features()).unwrap())
                    })
                    .sum::<f64>()
                    / set.len() as f64
            };
            let in_scene: Vec<Sample> = stream
                .iter()
                .filter(|s| s.timestamp() < boundary)
                .cloned()
                .collect();
            let out_scene: Vec<Sample> = stream
                .iter()
                .filter(|s| s.timestamp() >= boundary)
                .cloned()
                .collect();
            if mean_entropy(&out_scene) > mean_entropy(&in_scene) {
                wins += 1;
            }
        }
        assert!(wins >= 3, "entropy signal held in only {wins}/5 seeds");
    }
}
