//! The edge-side agent: inference over the local stream, per-window
//! caching, filtered uploads, and model update application.
//!
//! Inference always uses the currently installed parameters — a cloud
//! retrain in flight never blocks or changes the serving path until its
//! update message arrives. The agent state is owned by one inference
//! loop; transports deliver updates into it via channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{filter_window, FilterCache, FilterError};
use crate::modelkit::StudentModel;
use crate::proto::{Message, WireSample};
use crate::trainer::ModelError;
use crate::types::{EdgeId, FilterConfig, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum EdgeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("update for version {got} is stale (current {current})")]
    StaleVersion { current: u64, got: u64 },
    #[error("update for version {got} skips ahead of current {current}; resync required")]
    VersionGap { current: u64, got: u64 },
    #[error("update addressed to {got}, this agent is {expected}")]
    EdgeMismatch { expected: EdgeId, got: EdgeId },
    #[error("update payload length {got} does not match trainable partition {expected}")]
    BadPayload { expected: usize, got: usize },
}

/// One inference, as the agent's own record of it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub seq: u64,
    pub predicted: usize,
    /// Against generator ground truth; simulation-mode instrumentation.
    pub correct: bool,
    /// Model version that served this inference.
    pub version: u64,
}

/// Per-window roll-up emitted at every window close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub window_id: u64,
    pub close_time: f64,
    pub inferences: u64,
    pub correct: u64,
    /// Version installed at close time.
    pub version: u64,
    pub uploaded: u64,
}

impl WindowStat {
    pub fn accuracy(&self) -> f64 {
        if self.inferences == 0 {
            return 0.0;
        }
        self.correct as f64 / self.inferences as f64
    }
}

/// All state owned by one edge agent.
#[derive(Debug)]
pub struct EdgeState {
    edge_id: EdgeId,
    model: StudentModel,
    cache: FilterCache,
    current_version: u64,
    window_id: u64,
    window_inferences: u64,
    window_correct: u64,
    total_inferences: u64,
    total_correct: u64,
    history: Vec<WindowStat>,
}

impl EdgeState {
    pub fn new(edge_id: EdgeId, model: StudentModel) -> Self {
        EdgeState {
            cache: FilterCache::new(edge_id.clone()),
            edge_id,
            model,
            current_version: 0,
            window_id: 0,
            window_inferences: 0,
            window_correct: 0,
            total_inferences: 0,
            total_correct: 0,
            history: Vec::new(),
        }
    }

    pub fn edge_id(&self) -> &EdgeId {
        &self.edge_id
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }

    pub fn current_version(&self) -> u64 {
        self.current_version
    }

    pub fn window_id(&self) -> u64 {
        self.window_id
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn history(&self) -> &[WindowStat] {
        &self.history
    }

    pub fn total_inferences(&self) -> u64 {
        self.total_inferences
    }

    pub fn total_correct(&self) -> u64 {
        self.total_correct
    }

    /// Registration handshake message for this agent.
    pub fn register_message(&self) -> Message {
        Message::Register {
            edge_id: self.edge_id.clone(),
            feature_dim: self.model.feature_dim() as u32,
            class_count: self.model.class_count() as u32,
            frozen_checksum: self.model.frozen_checksum(),
        }
    }

    /// Runs inference on one sample and caches it for the current window.
    pub fn step(&mut self, sample: Sample) -> Result<StepRecord, EdgeError> {
        let output = self.model.infer(sample.features())?;
        let record = StepRecord {
            seq: sample.seq(),
            predicted: output.predicted(),
            correct: output.predicted() == sample.true_class(),
            version: self.current_version,
        };
        self.cache.push(sample, output)?;
        self.window_inferences += 1;
        self.total_inferences += 1;
        if record.correct {
            self.window_correct += 1;
            self.total_correct += 1;
        }
        Ok(record)
    }

    fn finish_window(&mut self, now: f64, uploaded: u64) {
        self.history.push(WindowStat {
            window_id: self.window_id,
            close_time: now,
            inferences: self.window_inferences,
            correct: self.window_correct,
            version: self.current_version,
            uploaded,
        });
        self.window_id += 1;
        self.window_inferences = 0;
        self.window_correct = 0;
    }

    /// Closes the window: filters the cache and packages the survivors.
    /// An empty window uploads nothing but still advances the window id.
    pub fn close_window(
        &mut self,
        cfg: &FilterConfig,
        now: f64,
    ) -> Result<Option<Message>, EdgeError> {
        if self.cache.is_empty() {
            log::debug!("edge {}: window {} empty, skipping upload", self.edge_id, self.window_id);
            self.cache.clear(now);
            self.finish_window(now, 0);
            return Ok(None);
        }
        let kept = filter_window(&mut self.cache, cfg, now)?;
        let samples: Vec<WireSample> = kept
            .into_iter()
            .map(|scored| {
                let (sample, output, _) = scored.into_parts();
                WireSample {
                    seq: sample.seq(),
                    timestamp: sample.timestamp(),
                    features: sample.features().to_vec(),
                    probs: output.probs().to_vec(),
                    predicted: output.predicted() as u32,
                }
            })
            .collect();
        let uploaded = samples.len() as u64;
        let msg = Message::sample_batch(self.edge_id.clone(), self.window_id, samples)
            .expect("filter_window returns at least one sample");
        self.finish_window(now, uploaded);
        Ok(Some(msg))
    }

    /// Discards the window without uploading (non-adaptive baselines).
    pub fn drop_window(&mut self, now: f64) {
        self.cache.clear(now);
        self.finish_window(now, 0);
    }

    /// Installs a dispatched head update. Stale versions are dropped
    /// (caller acks the current version); a version gap demands a
    /// re-registration instead of silent acceptance.
    pub fn apply_update(
        &mut self,
        edge_id: &EdgeId,
        version: u64,
        trainable_values: &[f64],
    ) -> Result<(), EdgeError> {
        if edge_id != &self.edge_id {
            return Err(EdgeError::EdgeMismatch {
                expected: self.edge_id.clone(),
                got: edge_id.clone(),
            });
        }
        if version <= self.current_version {
            return Err(EdgeError::StaleVersion {
                current: self.current_version,
                got: version,
            });
        }
        if version > self.current_version + 1 {
            return Err(EdgeError::VersionGap {
                current: self.current_version,
                got: version,
            });
        }
        if trainable_values.len() != self.model.trainable_len() {
            return Err(EdgeError::BadPayload {
                expected: self.model.trainable_len(),
                got: trainable_values.len(),
            });
        }
        self.model
            .apply_trainable(trainable_values)
            .expect("length checked above");
        self.current_version = version;
        log::info!("edge {}: installed model v{}", self.edge_id, version);
        Ok(())
    }
}
