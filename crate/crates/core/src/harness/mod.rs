//! Experiment driver: strategies, paired-seed simulations over the
//! in-memory transport, parameter sweeps, and the offline profiling
//! pipeline.
//!
//! All strategies for one seed consume bit-identical sample streams, so
//! metric differences are attributable to the strategy alone. The
//! simulated clock advances only by declared costs (labeling, training,
//! dispatch), which makes runs deterministic and byte-reproducible.

mod manifest;
mod profile;
mod report;
mod sim;
mod sweeps;

pub use manifest::{CostsConfig, Manifest, ModelConfig, RunTuning, WorkloadConfig};
pub use profile::{profile_offline, Profile, WorkloadProfile};
pub use report::{report_csv, time_series_csv, EdgeSeries, RunReport};
pub use sim::run_experiment;
pub use sweeps::{sweep_edge_count, sweep_filter_fraction, SweepRow, SweepTable};

use thiserror::Error;

use crate::bho::BhoError;
use crate::cloud::CloudError;
use crate::modelkit::WorkloadError;

/// The four compared adaptation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Strategy {
    /// Pre-trained model, never adapted.
    NoAdaptation,
    /// One fine-tune on the opening window of each stream, then frozen.
    OneTimeAdaptation,
    /// Fixed window, fixed epoch count, no urgency selection.
    FixedInterval,
    /// The full system: filtered uploads, urgency selection, early stop.
    EdgeSync,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::NoAdaptation,
        Strategy::OneTimeAdaptation,
        Strategy::FixedInterval,
        Strategy::EdgeSync,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::NoAdaptation => "NoAdaptation",
            Strategy::OneTimeAdaptation => "OneTimeAdaptation",
            Strategy::FixedInterval => "FixedInterval",
            Strategy::EdgeSync => "EdgeSync",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "no-adaptation" | "noadaptation" | "none" => Ok(Strategy::NoAdaptation),
            "one-time" | "one-time-adaptation" | "onetimeadaptation" => {
                Ok(Strategy::OneTimeAdaptation)
            }
            "fixed-interval" | "fixedinterval" | "fixed" => Ok(Strategy::FixedInterval),
            "edgesync" | "edge-sync" | "full" => Ok(Strategy::EdgeSync),
            other => Err(HarnessError::UnknownStrategy(other.to_string())),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Bho(#[from] BhoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}
