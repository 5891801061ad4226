//! The workload manifest: one TOML file declaring the model shape, the
//! per-edge workloads, the filter/urgency/trainer configs, and the cost
//! model for the simulated clock.
//!
//! ```toml
//! [model]
//! feature_dim = 16
//! hidden_dim = 32
//! class_count = 6
//! seed = 7
//!
//! [filter]
//! alpha = 1.0
//! beta = 1.0
//! keep_fraction = 0.7
//! window_seconds = 30.0
//!
//! [[workloads]]
//! edge_id = "cam0"
//! seed = 11
//! scene_count = 4
//! total_seconds = 1000.0
//! ```
//!
//! Every section except `[[workloads]]` has defaults; unset fields fall
//! back to them.

use serde::{Deserialize, Serialize};

use crate::modelkit::WorkloadSpec;
use crate::types::{EdgeId, FilterConfig, HyperParams};
use crate::urgency::UrgencyConfig;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            hidden_dim: 32,
            class_count: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UrgencySection {
    pub capacity_n: usize,
    pub batch_count_m: usize,
    /// Defaults to `batch_count_m` when omitted.
    pub decay_constant_tm: Option<f64>,
}

impl Default for UrgencySection {
    fn default() -> Self {
        UrgencySection {
            capacity_n: 90,
            batch_count_m: 10,
            decay_constant_tm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSection {
    pub patience_k: u32,
    pub max_time: f64,
    pub eval_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            patience_k: 5,
            max_time: 60.0,
            eval_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParamsSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for HyperParamsSection {
    fn default() -> Self {
        HyperParamsSection {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostsConfig {
    pub label_seconds_per_sample: f64,
    pub train_seconds_per_sample_epoch: f64,
    pub dispatch_seconds_per_kib: f64,
    pub profiling_seconds: f64,
    /// Edge-side latency; informational. Must stay below the sample
    /// inter-arrival gap for the real-time assumption to hold.
    pub inference_seconds_per_sample: f64,
}

impl Default for CostsConfig {
    fn default() -> Self {
        CostsConfig {
            label_seconds_per_sample: 0.1,
            train_seconds_per_sample_epoch: 0.002,
            dispatch_seconds_per_kib: 0.5,
            profiling_seconds: 0.001,
            inference_seconds_per_sample: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunTuning {
    pub buffer_capacity: usize,
    pub idle_poll_seconds: f64,
    pub fixed_interval_seconds: f64,
    pub fixed_epochs: u32,
    /// The fixed-interval baseline uploads whole windows by default;
    /// the filter-ratio sweep lowers this.
    pub fixed_interval_keep_fraction: f64,
    pub one_time_seconds: f64,
    /// Stats cadence for strategies without upload-driven windows.
    pub stats_window_seconds: f64,
    pub pretrain_samples_per_scene: usize,
    pub pretrain_epochs: u32,
    pub teacher_error_rate: f64,
}

impl Default for RunTuning {
    fn default() -> Self {
        RunTuning {
            buffer_capacity: 400,
            idle_poll_seconds: 1.0,
            fixed_interval_seconds: 100.0,
            fixed_epochs: 15,
            fixed_interval_keep_fraction: 1.0,
            one_time_seconds: 100.0,
            stats_window_seconds: 25.0,
            pretrain_samples_per_scene: 40,
            pretrain_epochs: 30,
            teacher_error_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub edge_id: String,
    pub seed: u64,
    #[serde(default = "default_scene_count")]
    pub scene_count: usize,
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_rate")]
    pub samples_per_second: f64,
    #[serde(default = "default_total")]
    pub total_seconds: f64,
}

fn default_scene_count() -> usize {
    4
}
fn default_mean_scale() -> f64 {
    2.0
}
fn default_noise_scale() -> f64 {
    1.0
}
fn default_rate() -> f64 {
    2.0
}
fn default_total() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub urgency: UrgencySection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub hyperparams: HyperParamsSection,
    #[serde(default)]
    pub costs: CostsConfig,
    #[serde(default)]
    pub run: RunTuning,
    pub workloads: Vec<WorkloadConfig>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let m: Manifest =
            toml::from_str(text).map_err(|e| HarnessError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Manifest::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.workloads.is_empty() {
            return Err(HarnessError::Manifest("no workloads declared".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for w in &self.workloads {
            if !seen.insert(&w.edge_id) {
                return Err(HarnessError::Manifest(format!(
                    "duplicate edge_id {:?}",
                    w.edge_id
                )));
            }
        }
        self.filter
            .validate()
            .map_err(|e| HarnessError::Manifest(e.to_string()))?;
        self.urgency_config()
            .map_err(|e| HarnessError::Manifest(e.to_string()))?;
        self.hyperparams()
            .map_err(|e| HarnessError::Manifest(e.to_string()))?;
        for w in &self.workloads {
            // Builds and validates the spec (seed mix 0 = base streams).
            self.workload_spec(w, 0)?;
        }
        if self.costs.inference_seconds_per_sample
            > 1.0 / self.workloads[0].samples_per_second
        {
            log::warn!("inference cost exceeds the sample period; edges would fall behind");
        }
        Ok(())
    }

    pub fn urgency_config(&self) -> Result<UrgencyConfig, crate::urgency::UrgencyError> {
        match self.urgency.decay_constant_tm {
            Some(tm) => UrgencyConfig::with_decay(
                self.urgency.capacity_n,
                self.urgency.batch_count_m,
                tm,
            ),
            None => UrgencyConfig::new(self.urgency.capacity_n, self.urgency.batch_count_m),
        }
    }

    pub fn hyperparams(&self) -> Result<HyperParams, crate::types::TypeError> {
        HyperParams::new(
            self.hyperparams.learning_rate,
            self.hyperparams.momentum,
            self.hyperparams.weight_decay,
        )
    }

    /// Materializes one workload for a run seed. The run seed perturbs
    /// the generator seed so different seeds draw different streams while
    /// all strategies within a seed share them.
    pub fn workload_spec(
        &self,
        w: &WorkloadConfig,
        run_seed: u64,
    ) -> Result<WorkloadSpec, HarnessError> {
        let mixed = w.seed.wrapping_add(run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok(WorkloadSpec::drifting(
            mixed,
            w.scene_count,
            self.model.class_count,
            self.model.feature_dim,
            w.mean_scale,
            w.noise_scale,
            w.samples_per_second,
            w.total_seconds,
        )?)
    }

    pub fn edge_ids(&self) -> Vec<EdgeId> {
        self.workloads
            .iter()
            .map(|w| EdgeId::new(w.edge_id.clone()))
            .collect()
    }

    /// A compact two-edge manifest used by tests and as a starting point
    /// for `harness` runs.
    pub fn default_desk() -> Self {
        Manifest {
            model: ModelConfig::default(),
            filter: FilterConfig::default(),
            urgency: UrgencySection::default(),
            trainer: TrainerSection::default(),
            hyperparams: HyperParamsSection::default(),
            costs: CostsConfig::default(),
            run: RunTuning::default(),
            workloads: vec![
                WorkloadConfig {
                    edge_id: "cam0".into(),
                    seed: 101,
                    scene_count: 4,
                    mean_scale: 2.0,
                    noise_scale: 1.0,
                    samples_per_second: 2.0,
                    total_seconds: 1000.0,
                },
                WorkloadConfig {
                    edge_id: "cam1".into(),
                    seed: 202,
                    scene_count: 4,
                    mean_scale: 2.0,
                    noise_scale: 1.0,
                    samples_per_second: 2.0,
                    total_seconds: 1000.0,
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_desk_round_trips_through_toml() {
        let m = Manifest::default_desk();
        let text = m.to_toml();
        let back = Manifest::from_toml(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn minimal_manifest_uses_defaults() {
        let text = r#"
            [[workloads]]
            edge_id = "cam0"
            seed = 1
        "#;
        let m = Manifest::from_toml(text).unwrap();
        assert_eq!(m.model.class_count, 6);
        assert_eq!(m.filter.keep_fraction, 0.7);
        assert_eq!(m.workloads[0].scene_count, 4);
    }

    #[test]
    fn duplicate_edge_ids_rejected() {
        let text = r#"
            [[workloads]]
            edge_id = "cam0"
            seed = 1
            [[workloads]]
            edge_id = "cam0"
            seed = 2
        "#;
        assert!(Manifest::from_toml(text).is_err());
    }

    #[test]
    fn run_seed_perturbs_streams_but_pairs_match() {
        let m = Manifest::default_desk();
        let w = &m.workloads[0];
        let a = m.workload_spec(w, 1).unwrap();
        let b = m.workload_spec(w, 1).unwrap();
        let c = m.workload_spec(w, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.seed, c.seed);
    }
}
