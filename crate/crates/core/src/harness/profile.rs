//! The offline profiling pipeline: per-workload Bayesian optimization,
//! mean aggregation into the global baseline, mini-batch refinement, and
//! the profile file the cloud loads at startup.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bho::{
    aggregate_h0, bho_optimize, refine_minibatch, BhoConfig, RefineConfig, TraceEntry,
    TrainEvalObjective,
};
use crate::modelkit::{generate_stream, Teacher, WorkloadSpec};
use crate::trainer::LabeledSample;
use crate::types::{EdgeId, HyperParams};

use super::manifest::Manifest;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub edge_id: EdgeId,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub best_hyperparams: HyperParams,
    pub trace: Vec<TraceEntry>,
}

/// The written profile: the refined global baseline plus full
/// per-workload optimization traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub h0: HyperParams,
    pub aggregated_before_refine: HyperParams,
    pub per_workload: Vec<WorkloadProfile>,
    pub seed: u64,
}

impl Profile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Profile::from_json(&text).map_err(|e| HarnessError::Serde(e.to_string()))
    }
}

/// Labeled objective segment for one workload: a seeded random
/// temporally contiguous slice of its stream.
fn objective_segment(
    spec: &WorkloadSpec,
    edge_id: &EdgeId,
    segment_len: usize,
    teacher_error_rate: f64,
    seed: u64,
) -> Vec<LabeledSample> {
    let stream = generate_stream(spec, edge_id);
    let mut teacher = Teacher::new(spec.class_count(), teacher_error_rate, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e6_3e47);
    let len = segment_len.min(stream.len());
    let start = if stream.len() > len {
        rng.gen_range(0..stream.len() - len)
    } else {
        0
    };
    stream[start..start + len]
        .iter()
        .map(|s| LabeledSample::new(s.features().to_vec(), teacher.label(s)))
        .collect()
}

/// Runs the full offline phase over the manifest's workloads and returns
/// the profile. Deterministic under (`bho_cfg.seed`, `refine_cfg.seed`).
pub fn profile_offline(
    manifest: &Manifest,
    bho_cfg: &BhoConfig,
    refine_cfg: &RefineConfig,
) -> Result<Profile, HarnessError> {
    manifest.validate()?;
    let bounds = bho_cfg.search_bounds;
    let mut per_workload = Vec::new();
    let mut bests = Vec::new();
    let mut specs = Vec::new();

    for (i, w) in manifest.workloads.iter().enumerate() {
        let edge_id = EdgeId::new(w.edge_id.clone());
        let spec = manifest.workload_spec(w, 0)?;
        let segment = objective_segment(
            &spec,
            &edge_id,
            refine_cfg.segment_length.max(150),
            manifest.run.teacher_error_rate,
            bho_cfg.seed ^ (i as u64).wrapping_mul(0x9e37),
        );
        let objective = TrainEvalObjective {
            segment,
            feature_dim: manifest.model.feature_dim,
            hidden_dim: manifest.model.hidden_dim,
            class_count: manifest.model.class_count,
            model_seed: manifest.model.seed,
            epochs: refine_cfg.cycle_epochs,
            split_seed: bho_cfg.seed,
        };
        let mut cfg = bho_cfg.clone();
        cfg.seed = bho_cfg.seed ^ (i as u64).wrapping_mul(0xA5A5_A5A5);
        let result = bho_optimize(|p| objective.evaluate(&bounds.denormalize(p)), &cfg)?;
        let best_hyperparams = bounds.denormalize(&result.best_point);
        bests.push(best_hyperparams);
        per_workload.push(WorkloadProfile {
            edge_id,
            best_point: result.best_point,
            best_value: result.best_value,
            best_hyperparams,
            trace: result.trace,
        });
        specs.push(spec);
    }

    let aggregated = aggregate_h0(&bests, true)?;
    let refined = refine_minibatch(
        &aggregated,
        &specs,
        refine_cfg,
        &bounds,
        manifest.model.hidden_dim,
        manifest.model.seed,
        manifest.run.teacher_error_rate,
    )?;

    Ok(Profile {
        h0: refined,
        aggregated_before_refine: aggregated,
        per_workload,
        seed: bho_cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfgs() -> (BhoConfig, RefineConfig) {
        let bho = BhoConfig {
            max_evaluations: 6,
            init_random_points: 4,
            ei_candidates: 128,
            seed: 3,
            ..BhoConfig::default()
        };
        let refine = RefineConfig {
            segment_length: 80,
            cycle_epochs: 3,
            consecutive_n: 2,
            max_iterations: 4,
            seed: 3,
            ..RefineConfig::default()
        };
        (bho, refine)
    }

    fn profiling_manifest(n_workloads: usize) -> Manifest {
        let mut m = Manifest::default_desk();
        m.workloads.truncate(n_workloads);
        for w in &mut m.workloads {
            w.total_seconds = 150.0;
            w.scene_count = 1;
        }
        m
    }

    #[test]
    fn single_workload_h0_is_its_refined_best() {
        let m = profiling_manifest(1);
        let (bho, refine) = quick_cfgs();
        let profile = profile_offline(&m, &bho, &refine).unwrap();
        assert_eq!(profile.per_workload.len(), 1);
        // Aggregation of one point is that point.
        let only = &profile.per_workload[0];
        assert!(
            (profile.aggregated_before_refine.learning_rate
                - only.best_hyperparams.learning_rate)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn profile_is_deterministic_under_seed() {
        let m = profiling_manifest(2);
        let (bho, refine) = quick_cfgs();
        let a = profile_offline(&m, &bho, &refine).unwrap();
        let b = profile_offline(&m, &bho, &refine).unwrap();
        assert_eq!(a.to_json().into_bytes(), b.to_json().into_bytes());
    }

    #[test]
    fn profile_round_trips_through_json() {
        let m = profiling_manifest(1);
        let (bho, refine) = quick_cfgs();
        let profile = profile_offline(&m, &bho, &refine).unwrap();
        let back = Profile::from_json(&profile.to_json()).unwrap();
        assert_eq!(back, profile);
    }
}
