//! Offline hyperparameter profiling.
//!
//! A Gaussian-process surrogate with a squared-exponential kernel models
//! the hyperparameters-to-accuracy map in normalized `[0,1]^3` space
//! (learning rate and weight decay on log scales, momentum linear).
//! Expected Improvement picks each next evaluation from a seeded random
//! candidate pool. Per-workload optima are averaged (log-scale dimensions
//! in log space) into the global baseline `h_0`, which a final
//! coordinate-wise greedy pass refines over temporally contiguous
//! mini-batches until improvement stays below `epsilon` for `N`
//! consecutive iterations.
//!
//! Kernel hyperparameters are fixed, not learned: the whole regime is 3
//! dimensions and a few dozen evaluations, where fixed values keep runs
//! reproducible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelkit::{generate_stream, StudentModel, Teacher, WorkloadSpec};
use crate::trainer::{LabeledSample, TrainableModel};
use crate::types::{EdgeId, HyperParams};

#[derive(Debug, Error, PartialEq)]
pub enum BhoError {
    #[error("kernel matrix is singular even after jitter escalation")]
    SingularKernel,
    #[error("gaussian process has no observations")]
    NoObservations,
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty hyperparameter list")]
    EmptyList,
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
}

/// Objective evaluation failure; the failing point is recorded at the
/// worst observed value instead of aborting the run.
#[derive(Debug, Error, PartialEq)]
#[error("objective failed: {0}")]
pub struct ObjectiveError(pub String);

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

/// One dimension of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimBounds {
    pub lo: f64,
    pub hi: f64,
    pub log_scale: bool,
}

impl DimBounds {
    fn validate(&self) -> Result<(), BhoError> {
        if !(self.lo < self.hi) {
            return Err(BhoError::BadConfig("bounds must satisfy lo < hi"));
        }
        if self.log_scale && self.lo <= 0.0 {
            return Err(BhoError::BadConfig("log-scale bounds must be positive"));
        }
        Ok(())
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.log_scale {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if self.log_scale {
            (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }
}

/// Bounds for (learning rate, momentum, weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub learning_rate: DimBounds,
    pub momentum: DimBounds,
    pub weight_decay: DimBounds,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            learning_rate: DimBounds {
                lo: 1e-4,
                hi: 1e-1,
                log_scale: true,
            },
            momentum: DimBounds {
                lo: 0.0,
                hi: 0.99,
                log_scale: false,
            },
            weight_decay: DimBounds {
                lo: 1e-6,
                hi: 1e-2,
                log_scale: true,
            },
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<(), BhoError> {
        self.learning_rate.validate()?;
        self.momentum.validate()?;
        self.weight_decay.validate()
    }

    pub fn normalize(&self, h: &HyperParams) -> [f64; 3] {
        [
            self.learning_rate.to_unit(h.learning_rate),
            self.momentum.to_unit(h.momentum),
            self.weight_decay.to_unit(h.weight_decay),
        ]
    }

    pub fn denormalize(&self, p: &[f64]) -> HyperParams {
        let momentum = self.momentum.from_unit(p[1]).clamp(0.0, 1.0 - 1e-9);
        HyperParams::new(
            self.learning_rate.from_unit(p[0]),
            momentum,
            self.weight_decay.from_unit(p[2]),
        )
        .expect("denormalized point is inside validated bounds")
    }
}

// ---------------------------------------------------------------------------
// Gaussian process surrogate
// ---------------------------------------------------------------------------

/// GP with squared-exponential kernel
/// `k(a, b) = variance * exp(-||a-b||^2 / (2 * lengthscale^2))` and fixed
/// hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GPModel {
    observations: Vec<(Vec<f64>, f64)>,
    dim: usize,
    pub kernel_lengthscale: f64,
    pub kernel_variance: f64,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl GPModel {
    pub fn new(dim: usize, lengthscale: f64, variance: f64, noise: f64) -> Self {
        GPModel {
            observations: Vec::new(),
            dim,
            kernel_lengthscale: lengthscale,
            kernel_variance: variance,
            noise_variance: noise,
            mean_constant: 0.0,
        }
    }

    /// Defaults tuned for the normalized unit cube.
    pub fn default_for_dim(dim: usize) -> Self {
        GPModel::new(dim, 0.2, 1.0, 1e-4)
    }

    pub fn observations(&self) -> &[(Vec<f64>, f64)] {
        &self.observations
    }

    pub fn observe(&mut self, point: Vec<f64>, value: f64) -> Result<(), BhoError> {
        if point.len() != self.dim {
            return Err(BhoError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        self.observations.push((point, value));
        // Constant prior mean tracks the running sample mean.
        self.mean_constant = self.observations.iter().map(|(_, y)| y).sum::<f64>()
            / self.observations.len() as f64;
        Ok(())
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.kernel_variance
            * (-d2 / (2.0 * self.kernel_lengthscale * self.kernel_lengthscale)).exp()
    }

    /// Factorizes the kernel matrix once; escalating jitter resolves
    /// near-duplicate points, and only exhausted jitter is an error.
    pub fn fit(&self) -> Result<FittedGp<'_>, BhoError> {
        let n = self.observations.len();
        if n == 0 {
            return Err(BhoError::NoObservations);
        }
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = self.kernel(&self.observations[i].0, &self.observations[j].0);
                base[i * n + j] = k;
                base[j * n + i] = k;
            }
        }
        let mut jitter = 0.0;
        loop {
            let mut chol = base.clone();
            for i in 0..n {
                chol[i * n + i] += self.noise_variance + jitter;
            }
            if cholesky_in_place(&mut chol, n).is_ok() {
                let mut alpha: Vec<f64> = self
                    .observations
                    .iter()
                    .map(|(_, y)| y - self.mean_constant)
                    .collect();
                solve_lower(&chol, n, &mut alpha);
                solve_lower_transpose(&chol, n, &mut alpha);
                return Ok(FittedGp {
                    gp: self,
                    chol,
                    alpha,
                });
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e-4 {
                return Err(BhoError::SingularKernel);
            }
        }
    }
}

/// Cached Cholesky factor and weights for repeated posterior queries.
pub struct FittedGp<'a> {
    gp: &'a GPModel,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

impl FittedGp<'_> {
    /// Posterior mean and (latent) variance at `query`.
    pub fn predict(&self, query: &[f64]) -> Result<(f64, f64), BhoError> {
        if query.len() != self.gp.dim {
            return Err(BhoError::DimensionMismatch {
                expected: self.gp.dim,
                got: query.len(),
            });
        }
        let n = self.gp.observations.len();
        let k_vec: Vec<f64> = self
            .gp
            .observations
            .iter()
            .map(|(x, _)| self.gp.kernel(x, query))
            .collect();
        let mean = self.gp.mean_constant
            + k_vec.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>();
        let mut v = k_vec;
        solve_lower(&self.chol, n, &mut v);
        let variance = (self.gp.kernel_variance - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        Ok((mean, variance))
    }
}

/// One-shot posterior query; `bho_optimize` reuses a cached fit instead.
pub fn gp_fit_predict(gp: &GPModel, query: &[f64]) -> Result<(f64, f64), BhoError> {
    gp.fit()?.predict(query)
}

fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), ()> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(());
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // Zero the strict upper triangle so the factor is clean.
    for i in 0..n {
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place.
fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

// ---------------------------------------------------------------------------
// Expected improvement
// ---------------------------------------------------------------------------

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Closed-form EI for maximization:
/// `(mu - f+) * Phi(z) + sigma * phi(z)` with `z = (mu - f+) / sigma`,
/// degrading to `max(mu - f+, 0)` when the variance vanishes.
pub fn expected_improvement(mean: f64, variance: f64, best_so_far: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = mean - best_so_far;
    if sigma == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

// ---------------------------------------------------------------------------
// Optimization loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhoConfig {
    pub max_evaluations: usize,
    pub init_random_points: usize,
    pub search_bounds: SearchBounds,
    pub ei_candidates: usize,
    pub seed: u64,
    pub kernel_lengthscale: f64,
    pub kernel_variance: f64,
    pub noise_variance: f64,
}

impl Default for BhoConfig {
    fn default() -> Self {
        BhoConfig {
            max_evaluations: 25,
            init_random_points: 8,
            search_bounds: SearchBounds::default(),
            ei_candidates: 2048,
            seed: 0,
            kernel_lengthscale: 0.2,
            kernel_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

impl BhoConfig {
    pub fn validate(&self) -> Result<(), BhoError> {
        if self.init_random_points == 0 {
            return Err(BhoError::BadConfig("init_random_points must be positive"));
        }
        if self.init_random_points >= self.max_evaluations {
            return Err(BhoError::BadConfig(
                "init_random_points must be below max_evaluations",
            ));
        }
        if self.ei_candidates == 0 {
            return Err(BhoError::BadConfig("ei_candidates must be positive"));
        }
        self.search_bounds.validate()
    }
}

/// One evaluated point in a BHO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub point: Vec<f64>,
    pub value: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhoResult {
    /// Best point in normalized coordinates.
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<TraceEntry>,
}

const POINT_DIM: usize = 3;

fn random_point(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..POINT_DIM).map(|_| rng.gen::<f64>()).collect()
}

/// Seeded random initialization followed by GP + EI iterations over the
/// normalized cube. The objective sees normalized points; failures are
/// recorded at the worst observed value so the surrogate steers away.
pub fn bho_optimize<F>(mut objective: F, cfg: &BhoConfig) -> Result<BhoResult, BhoError>
where
    F: FnMut(&[f64]) -> Result<f64, ObjectiveError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(cfg.max_evaluations);

    let record =
        |point: Vec<f64>, objective: &mut F, trace: &mut Vec<TraceEntry>| match objective(&point) {
            Ok(value) => trace.push(TraceEntry {
                point,
                value,
                failed: false,
            }),
            Err(_) => {
                let worst = trace
                    .iter()
                    .filter(|t| !t.failed)
                    .map(|t| t.value)
                    .fold(f64::INFINITY, f64::min);
                let value = if worst.is_finite() { worst } else { 0.0 };
                trace.push(TraceEntry {
                    point,
                    value,
                    failed: true,
                });
            }
        };

    for _ in 0..cfg.init_random_points.min(cfg.max_evaluations) {
        let p = random_point(&mut rng);
        record(p, &mut objective, &mut trace);
    }

    while trace.len() < cfg.max_evaluations {
        let mut gp = GPModel::new(
            POINT_DIM,
            cfg.kernel_lengthscale,
            cfg.kernel_variance,
            cfg.noise_variance,
        );
        for t in &trace {
            gp.observe(t.point.clone(), t.value)?;
        }
        let fit = gp.fit()?;
        let best = trace
            .iter()
            .map(|t| t.value)
            .fold(f64::NEG_INFINITY, f64::max);

        let mut best_candidate: Option<(Vec<f64>, f64)> = None;
        for _ in 0..cfg.ei_candidates {
            let c = random_point(&mut rng);
            let (mean, var) = fit.predict(&c)?;
            let ei = expected_improvement(mean, var, best);
            // Strict greater-than keeps the first of tied candidates,
            // which makes the argmax deterministic.
            if best_candidate.as_ref().map_or(true, |(_, b)| ei > *b) {
                best_candidate = Some((c, ei));
            }
        }
        let (next, _) = best_candidate.expect("candidate pool is non-empty");
        record(next, &mut objective, &mut trace);
    }

    let best = trace
        .iter()
        .max_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .expect("objective values are finite")
        })
        .expect("trace is non-empty");
    Ok(BhoResult {
        best_point: best.point.clone(),
        best_value: best.value,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Dimension-wise mean of per-workload optima. Log-scale dimensions
/// (learning rate, weight decay) average in log space, i.e. geometric
/// mean; `log_space_rates = false` gives the literal raw-space mean.
pub fn aggregate_h0(
    per_workload_best: &[HyperParams],
    log_space_rates: bool,
) -> Result<HyperParams, BhoError> {
    if per_workload_best.is_empty() {
        return Err(BhoError::EmptyList);
    }
    let n = per_workload_best.len() as f64;
    let momentum = per_workload_best.iter().map(|h| h.momentum).sum::<f64>() / n;
    let (lr, wd) = if log_space_rates {
        let lr = (per_workload_best
            .iter()
            .map(|h| h.learning_rate.ln())
            .sum::<f64>()
            / n)
            .exp();
        let wd = (per_workload_best
            .iter()
            .map(|h| h.weight_decay.ln())
            .sum::<f64>()
            / n)
            .exp();
        (lr, wd)
    } else {
        (
            per_workload_best.iter().map(|h| h.learning_rate).sum::<f64>() / n,
            per_workload_best.iter().map(|h| h.weight_decay).sum::<f64>() / n,
        )
    };
    HyperParams::new(lr, momentum.clamp(0.0, 1.0 - 1e-9), wd)
        .map_err(|_| BhoError::BadConfig("aggregated hyperparameters out of range"))
}

// ---------------------------------------------------------------------------
// Objective hook and mini-batch refinement
// ---------------------------------------------------------------------------

/// The profiling objective: train a fresh student on a labeled segment
/// for a fixed epoch budget and report the best-epoch holdout accuracy.
/// This is the hook any alternative profiler would optimize.
pub struct TrainEvalObjective {
    pub segment: Vec<LabeledSample>,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub model_seed: u64,
    pub epochs: u32,
    pub split_seed: u64,
}

impl TrainEvalObjective {
    pub fn evaluate(&self, h: &HyperParams) -> Result<f64, ObjectiveError> {
        let (train, eval) = crate::trainer::split_train_eval(&self.segment, 0.2, self.split_seed);
        let mut model = StudentModel::new(
            self.feature_dim,
            self.hidden_dim,
            self.class_count,
            self.model_seed,
        );
        model.begin_session();
        let mut best = 0.0f64;
        for _ in 0..self.epochs {
            model
                .train_epoch(&train, h)
                .map_err(|e| ObjectiveError(e.to_string()))?;
            best = best.max(model.evaluate(&eval));
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Improvement threshold for the stall counter.
    pub epsilon: f64,
    /// Consecutive below-threshold iterations before termination.
    pub consecutive_n: u32,
    /// Samples per temporally contiguous segment.
    pub segment_length: usize,
    /// Perturbation size in normalized coordinates.
    pub step_scale: f64,
    pub seed: u64,
    /// Epoch budget of each train/eval cycle.
    pub cycle_epochs: u32,
    /// Hard safety cap on refinement iterations.
    pub max_iterations: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            epsilon: 0.005,
            consecutive_n: 3,
            segment_length: 200,
            step_scale: 0.1,
            seed: 0,
            cycle_epochs: 8,
            max_iterations: 40,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), BhoError> {
        if !(self.epsilon > 0.0) {
            return Err(BhoError::BadConfig("epsilon must be positive"));
        }
        if self.consecutive_n == 0 {
            return Err(BhoError::BadConfig("consecutive_n must be at least 1"));
        }
        if self.segment_length < 10 {
            return Err(BhoError::BadConfig("segment_length must be at least 10"));
        }
        if !(self.step_scale > 0.0) {
            return Err(BhoError::BadConfig("step_scale must be positive"));
        }
        Ok(())
    }
}

/// Coordinate-wise greedy refinement of `h` over seeded random
/// temporally contiguous segments. Each iteration evaluates the
/// incumbent on a fresh segment, tries `+/- step_scale` per dimension,
/// and keeps a perturbation only when validation accuracy strictly
/// improves on that segment. Terminates when the per-iteration
/// improvement stays below `epsilon` for `consecutive_n` iterations.
#[allow(clippy::too_many_arguments)]
pub fn refine_minibatch(
    h: &HyperParams,
    workloads: &[WorkloadSpec],
    cfg: &RefineConfig,
    bounds: &SearchBounds,
    hidden_dim: usize,
    model_seed: u64,
    teacher_error_rate: f64,
) -> Result<HyperParams, BhoError> {
    cfg.validate()?;
    if workloads.is_empty() {
        return Err(BhoError::EmptyList);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let streams: Vec<Vec<LabeledSample>> = workloads
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut teacher =
                Teacher::new(w.class_count(), teacher_error_rate, cfg.seed ^ i as u64);
            generate_stream(w, &EdgeId::new(format!("profile-{i}")))
                .iter()
                .map(|s| LabeledSample::new(s.features().to_vec(), teacher.label(s)))
                .collect()
        })
        .collect();

    let mut current = bounds.normalize(h).to_vec();
    let mut stall = 0u32;
    for iter in 0..cfg.max_iterations {
        let w_idx = rng.gen_range(0..workloads.len());
        let stream = &streams[w_idx];
        let seg_len = cfg.segment_length.min(stream.len());
        let start = if stream.len() > seg_len {
            rng.gen_range(0..stream.len() - seg_len)
        } else {
            0
        };
        let objective = TrainEvalObjective {
            segment: stream[start..start + seg_len].to_vec(),
            feature_dim: workloads[w_idx].feature_dim,
            hidden_dim,
            class_count: workloads[w_idx].class_count(),
            model_seed,
            epochs: cfg.cycle_epochs,
            split_seed: cfg.seed ^ (iter as u64).wrapping_mul(0x9e3779b9),
        };
        let eval_point = |p: &[f64]| objective.evaluate(&bounds.denormalize(p));

        let base_acc =
            eval_point(&current).map_err(|_| BhoError::BadConfig("objective failed"))?;
        let mut incumbent_acc = base_acc;
        for dim in 0..POINT_DIM {
            for dir in [1.0, -1.0] {
                let mut candidate = current.clone();
                candidate[dim] = (candidate[dim] + dir * cfg.step_scale).clamp(0.0, 1.0);
                if candidate[dim] == current[dim] {
                    continue;
                }
                if let Ok(acc) = eval_point(&candidate) {
                    if acc > incumbent_acc {
                        incumbent_acc = acc;
                        current = candidate;
                        break; // accepted this dimension; move to the next
                    }
                }
            }
        }
        let improvement = incumbent_acc - base_acc;
        if improvement < cfg.epsilon {
            stall += 1;
            if stall >= cfg.consecutive_n {
                break;
            }
        } else {
            stall = 0;
        }
    }
    Ok(bounds.denormalize(&current))
}
