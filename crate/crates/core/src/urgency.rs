//! Cloud-side accuracy banking and urgency scoring.
//!
//! For every edge the cloud keeps a bounded FIFO of binary correctness
//! records (student prediction vs. teacher label). The bank is split into
//! `m` equal batches, oldest first; the urgency degree compares each
//! batch's summed accuracy against the oldest batch — the reference for
//! how the model performed right after its last retrain — with weights
//! that grow toward recent batches. Urgency is positive exactly when
//! accuracy has degraded since that reference, and the edge with the
//! highest degree retrains next.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AccuracyRecord, EdgeId};

#[derive(Debug, Error, PartialEq)]
pub enum UrgencyError {
    #[error("bank holds {got} records, needs {needed} before urgency is defined")]
    BankNotFull { needed: usize, got: usize },
    #[error("expected {expected} batch sums, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no candidate edges")]
    EmptyMap,
    #[error("invalid urgency config: {0}")]
    BadConfig(&'static str),
}

/// Capacity `n`, batch count `m` (with `n % m == 0`), and the decay
/// constant in the recency weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrgencyConfig {
    pub capacity_n: usize,
    pub batch_count_m: usize,
    pub decay_constant_tm: f64,
}

impl UrgencyConfig {
    /// The decay constant defaults to `m`, the only same-scale quantity
    /// in the weight formula.
    pub fn new(capacity_n: usize, batch_count_m: usize) -> Result<Self, UrgencyError> {
        Self::with_decay(capacity_n, batch_count_m, batch_count_m as f64)
    }

    pub fn with_decay(
        capacity_n: usize,
        batch_count_m: usize,
        decay_constant_tm: f64,
    ) -> Result<Self, UrgencyError> {
        if capacity_n == 0 || batch_count_m == 0 {
            return Err(UrgencyError::BadConfig("capacity and batch count must be positive"));
        }
        if capacity_n % batch_count_m != 0 {
            return Err(UrgencyError::BadConfig("capacity must be divisible by batch count"));
        }
        if !(decay_constant_tm.is_finite() && decay_constant_tm > 0.0) {
            return Err(UrgencyError::BadConfig("decay constant must be positive"));
        }
        Ok(UrgencyConfig {
            capacity_n,
            batch_count_m,
            decay_constant_tm,
        })
    }

    /// Records per batch, `l = n / m`.
    pub fn batch_len(&self) -> usize {
        self.capacity_n / self.batch_count_m
    }
}

impl Default for UrgencyConfig {
    fn default() -> Self {
        UrgencyConfig::new(90, 10).expect("default config is valid")
    }
}

/// Bounded FIFO of accuracy records for one edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeBank {
    edge_id: EdgeId,
    records: VecDeque<AccuracyRecord>,
    capacity: usize,
}

impl EdgeBank {
    pub fn new(edge_id: EdgeId, capacity: usize) -> Self {
        EdgeBank {
            edge_id,
            records: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn edge_id(&self) -> &EdgeId {
        &self.edge_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &AccuracyRecord> {
        self.records.iter()
    }

    /// Cleared when the edge's model is updated: post-update history must
    /// not mix with pre-update records.
    pub fn clear(&mut self) {
        self.records.clear();
    }
}

/// Appends one correctness record, evicting the oldest when full.
pub fn record_accuracy(bank: &mut EdgeBank, correct: bool, seq: u64) {
    if bank.records.len() == bank.capacity {
        bank.records.pop_front();
    }
    bank.records.push_back(AccuracyRecord::new(correct, seq));
}

/// Sums the bank into `m` consecutive batches of length `l = n / m`,
/// oldest batch first. Requires a full bank.
pub fn batch_accuracies(bank: &EdgeBank, cfg: &UrgencyConfig) -> Result<Vec<f64>, UrgencyError> {
    if bank.records.len() != cfg.capacity_n {
        return Err(UrgencyError::BankNotFull {
            needed: cfg.capacity_n,
            got: bank.records.len(),
        });
    }
    let l = cfg.batch_len();
    let mut sums = Vec::with_capacity(cfg.batch_count_m);
    let mut it = bank.records.iter();
    for _ in 0..cfg.batch_count_m {
        let s: f64 = it.by_ref().take(l).map(AccuracyRecord::as_count).sum();
        sums.push(s);
    }
    Ok(sums)
}

/// Recency weight for batch `i`: `sigmoid(i / tm) * m`, strictly
/// increasing in `i` and bounded by `m`.
pub fn recency_weight(i: usize, cfg: &UrgencyConfig) -> f64 {
    let m = cfg.batch_count_m as f64;
    let s = 1.0 / (1.0 + (-(i as f64) / cfg.decay_constant_tm).exp());
    s * m
}

/// The urgency degree: `d = sum_i (wa_0 - wa_i) * w_i` with `wa_0` the
/// oldest batch. `d > 0` when recent batches degrade relative to the
/// post-retrain reference; recent batches carry larger weight.
pub fn urgency_degree(batches: &[f64], cfg: &UrgencyConfig) -> Result<f64, UrgencyError> {
    if batches.len() != cfg.batch_count_m {
        return Err(UrgencyError::LengthMismatch {
            expected: cfg.batch_count_m,
            got: batches.len(),
        });
    }
    let reference = batches[0];
    let d = batches
        .iter()
        .enumerate()
        .map(|(i, wa)| (reference - wa) * recency_weight(i, cfg))
        .sum();
    Ok(d)
}

/// One edge's urgency standing at selection time.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeUrgency {
    pub edge_id: EdgeId,
    pub degree: f64,
    pub last_update_time: f64,
}

/// Argmax by degree; ties go to the edge updated longest ago, then to the
/// lowest edge id. Total ordering makes the result independent of
/// candidate enumeration order.
pub fn select_edge(candidates: &[EdgeUrgency]) -> Result<EdgeId, UrgencyError> {
    candidates
        .iter()
        .max_by(|a, b| {
            a.degree
                .partial_cmp(&b.degree)
                .expect("urgency degrees are finite")
                .then_with(|| {
                    b.last_update_time
                        .partial_cmp(&a.last_update_time)
                        .expect("update times are finite")
                })
                .then_with(|| b.edge_id.cmp(&a.edge_id))
        })
        .map(|e| e.edge_id.clone())
        .ok_or(UrgencyError::EmptyMap)
}
