//! Edge-cloud continuous-learning control plane.
//!
//! Lightweight models at the edge drift as their input streams change.
//! This crate implements the full control loop that keeps them current:
//!
//! * [`filter`] — edge-side sample scoring (prediction entropy + recency)
//!   and top-k selection, so only informative samples are uploaded.
//! * [`urgency`] — cloud-side per-edge accuracy banking and urgency
//!   scoring, deciding which edge model retrains next.
//! * [`trainer`] — early-stopped retraining with a patience window and a
//!   global time cap, checkpointing the best-evaluation epoch.
//! * [`bho`] — offline hyperparameter profiling: Gaussian-process
//!   surrogate with expected-improvement acquisition, mean aggregation,
//!   and mini-batch refinement.
//! * [`modelkit`] — deterministic synthetic student/teacher models and
//!   drifting sample streams for desk-scale experiments.
//! * [`proto`] — the length-prefixed binary wire protocol between edge
//!   agents and the cloud coordinator.
//! * [`edge`] / [`cloud`] — the two services, usable in-process (for the
//!   deterministic simulator) or over TCP.
//! * [`harness`] — the experiment driver: strategies, paired-seed
//!   simulations, sweeps, and the offline profiling pipeline.
//!
//! Shared domain types live in [`types`] and are re-exported here.

pub mod bho;
pub mod clock;
pub mod cloud;
pub mod edge;
pub mod filter;
pub mod harness;
pub mod modelkit;
pub mod proto;
pub mod trainer;
pub mod types;
pub mod urgency;

pub use clock::{Clock, SimClock, WallClock};
pub use types::{
    AccuracyRecord, EdgeId, FilterConfig, HyperParams, InferenceOutput, ModelParams, Sample,
    ScoredSample, TypeError,
};
