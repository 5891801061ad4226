//! The cloud coordinator: ingests filtered batches, teacher-labels them,
//! maintains per-edge accuracy banks and labeled buffers, and runs the
//! select-train-dispatch cycle.
//!
//! The wire carries no ground truth, so at registration the coordinator
//! receives the edge's deterministic truth table (regenerated from the
//! shared workload config) and labels ingested samples by sequence
//! index through the teacher. Per-edge models and buffers stay resident
//! in memory for the whole run; one training session runs at a time, and
//! the trained edge's bank is cleared on dispatch so post-update history
//! starts clean.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, CostSink};
use crate::modelkit::{StudentModel, Teacher};
use crate::proto::{self, Message, WireSample};
use crate::trainer::{
    train_until_stop, LabeledSample, ModelError, StopReason, TrainError, TrainableModel,
    TrainerConfig,
};
use crate::types::EdgeId;
use crate::urgency::{
    batch_accuracies, record_accuracy, select_edge, urgency_degree, EdgeBank, EdgeUrgency,
    UrgencyConfig, UrgencyError,
};

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("edge {0} is not registered")]
    UnknownEdge(EdgeId),
    #[error("edge {0} is already registered")]
    DuplicateEdge(EdgeId),
    #[error("frozen checksum {got:#x} does not match coordinator's {expected:#x}")]
    ChecksumMismatch { expected: u64, got: u64 },
    #[error("edge dimensions {got:?} do not match coordinator's {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("sample seq {seq} is outside the known stream for edge {edge}")]
    UnknownSeq { edge: EdgeId, seq: u64 },
    #[error("no edge is trainable this cycle")]
    NoTrainableEdge,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Urgency(#[from] UrgencyError),
}

/// Modeled processing costs for cycle accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleCosts {
    pub label_seconds_per_sample: f64,
    pub train_seconds_per_sample_epoch: f64,
    pub dispatch_seconds_per_kib: f64,
    /// Constant per-cycle hyperparameter lookup cost; offline profiling
    /// leaves only this residue online.
    pub profiling_seconds: f64,
}

impl Default for CycleCosts {
    fn default() -> Self {
        CycleCosts {
            label_seconds_per_sample: 0.2,
            train_seconds_per_sample_epoch: 0.002,
            dispatch_seconds_per_kib: 0.5,
            profiling_seconds: 0.001,
        }
    }
}

/// Accounting for one training cycle, mirroring the label / retrain /
/// profiling / communication decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub selected_edge: EdgeId,
    pub urgencies: Vec<(EdgeId, f64)>,
    pub epochs_run: u32,
    pub best_eval: f64,
    pub stop_reason: StopReason,
    pub train_set_size: usize,
    pub label_seconds: f64,
    pub profiling_seconds: f64,
    pub train_seconds: f64,
    pub dispatch_seconds: f64,
    pub total_seconds: f64,
    pub dispatched_bytes: u64,
    pub completed_at: f64,
}

struct EdgeEntry {
    bank: EdgeBank,
    buffer: VecDeque<LabeledSample>,
    model: StudentModel,
    truth: Vec<usize>,
    last_update_time: f64,
    version: u64,
}

/// Charges modeled training time per epoch while delegating to the
/// wrapped model.
struct CostedModel<'a> {
    inner: &'a mut StudentModel,
    sink: &'a dyn CostSink,
    seconds_per_sample_epoch: f64,
}

impl TrainableModel for CostedModel<'_> {
    fn train_epoch(
        &mut self,
        batch: &[LabeledSample],
        h: &crate::types::HyperParams,
    ) -> Result<f64, ModelError> {
        let loss = self.inner.train_epoch(batch, h)?;
        self.sink
            .charge(self.seconds_per_sample_epoch * batch.len() as f64);
        Ok(loss)
    }

    fn evaluate(&self, holdout: &[LabeledSample]) -> f64 {
        self.inner.evaluate(holdout)
    }

    fn trainable_snapshot(&self) -> Vec<f64> {
        self.inner.trainable_snapshot()
    }

    fn restore_trainable(&mut self, snapshot: &[f64]) {
        self.inner.restore_trainable(snapshot)
    }

    fn begin_session(&mut self) {
        self.inner.begin_session()
    }
}

pub struct Coordinator {
    edges: BTreeMap<EdgeId, EdgeEntry>,
    template: StudentModel,
    teacher: Teacher,
    urgency_cfg: UrgencyConfig,
    trainer_cfg: TrainerConfig,
    costs: CycleCosts,
    buffer_capacity: usize,
    /// Label seconds accumulated by ingest since the last cycle record.
    pending_label_seconds: f64,
    cycles_run: u64,
    idle_cycles: u64,
}

impl Coordinator {
    pub fn new(
        template: StudentModel,
        teacher: Teacher,
        urgency_cfg: UrgencyConfig,
        trainer_cfg: TrainerConfig,
        costs: CycleCosts,
        buffer_capacity: usize,
    ) -> Self {
        Coordinator {
            edges: BTreeMap::new(),
            template,
            teacher,
            urgency_cfg,
            trainer_cfg,
            costs,
            buffer_capacity,
            pending_label_seconds: 0.0,
            cycles_run: 0,
            idle_cycles: 0,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn cycles_run(&self) -> u64 {
        self.cycles_run
    }

    pub fn idle_cycles(&self) -> u64 {
        self.idle_cycles
    }

    pub fn edge_version(&self, edge: &EdgeId) -> Option<u64> {
        self.edges.get(edge).map(|e| e.version)
    }

    pub fn edge_model(&self, edge: &EdgeId) -> Option<&StudentModel> {
        self.edges.get(edge).map(|e| &e.model)
    }

    pub fn bank_len(&self, edge: &EdgeId) -> Option<usize> {
        self.edges.get(edge).map(|e| e.bank.len())
    }

    pub fn buffer_len(&self, edge: &EdgeId) -> Option<usize> {
        self.edges.get(edge).map(|e| e.buffer.len())
    }

    /// Registers an edge. `truth` is the per-sequence ground-truth table
    /// regenerated from the shared workload config; the checksum proves
    /// edge and cloud hold bitwise-identical frozen partitions.
    pub fn register(
        &mut self,
        edge_id: EdgeId,
        feature_dim: u32,
        class_count: u32,
        frozen_checksum: u64,
        truth: Vec<usize>,
        now: f64,
    ) -> Result<(), CloudError> {
        let expected = self.template.frozen_checksum();
        if frozen_checksum != expected {
            return Err(CloudError::ChecksumMismatch {
                expected,
                got: frozen_checksum,
            });
        }
        let want = (
            self.template.feature_dim() as u32,
            self.template.class_count() as u32,
        );
        if (feature_dim, class_count) != want {
            return Err(CloudError::DimensionMismatch {
                expected: want,
                got: (feature_dim, class_count),
            });
        }
        if self.edges.contains_key(&edge_id) {
            return Err(CloudError::DuplicateEdge(edge_id));
        }
        self.edges.insert(
            edge_id.clone(),
            EdgeEntry {
                bank: EdgeBank::new(edge_id, self.urgency_cfg.capacity_n),
                buffer: VecDeque::with_capacity(self.buffer_capacity),
                model: self.template.clone(),
                truth,
                last_update_time: now,
                version: 0,
            },
        );
        Ok(())
    }

    /// Teacher-labels one uploaded batch, updating the edge's accuracy
    /// bank and labeled buffer. Charges label time to the cost sink.
    pub fn ingest_batch(
        &mut self,
        edge_id: &EdgeId,
        samples: &[WireSample],
        sink: &dyn CostSink,
    ) -> Result<(), CloudError> {
        let entry = self
            .edges
            .get_mut(edge_id)
            .ok_or_else(|| CloudError::UnknownEdge(edge_id.clone()))?;
        for s in samples {
            let true_class = *entry.truth.get(s.seq as usize).ok_or_else(|| {
                CloudError::UnknownSeq {
                    edge: edge_id.clone(),
                    seq: s.seq,
                }
            })?;
            let label = self.teacher.label_class(true_class);
            let correct = label == s.predicted as usize;
            record_accuracy(&mut entry.bank, correct, s.seq);
            if entry.buffer.len() == self.buffer_capacity {
                entry.buffer.pop_front();
            }
            entry
                .buffer
                .push_back(LabeledSample::new(s.features.clone(), label));
        }
        let label_seconds = self.costs.label_seconds_per_sample * samples.len() as f64;
        sink.charge(label_seconds);
        self.pending_label_seconds += label_seconds;
        Ok(())
    }

    /// Urgency degree per edge; incomplete banks report the 0 default.
    pub fn urgency_snapshot(&self) -> Vec<(EdgeId, f64)> {
        self.edges
            .iter()
            .map(|(id, e)| {
                let d = batch_accuracies(&e.bank, &self.urgency_cfg)
                    .and_then(|batches| urgency_degree(&batches, &self.urgency_cfg))
                    .unwrap_or(0.0);
                (id.clone(), d)
            })
            .collect()
    }

    /// One select-train-dispatch cycle. Trains the argmax-urgency edge
    /// on its labeled buffer with the profiled hyperparameters, clears
    /// that edge's bank, and returns the update message plus the cycle's
    /// time decomposition.
    pub fn run_cycle(
        &mut self,
        clock: &dyn Clock,
        sink: &dyn CostSink,
    ) -> Result<(Message, CycleRecord), CloudError> {
        if self.edges.is_empty() {
            self.idle_cycles += 1;
            return Err(CloudError::NoTrainableEdge);
        }
        let urgencies = self.urgency_snapshot();
        let all_default = self.edges.values().all(|e| !e.bank.is_full());
        let any_full_buffer = self
            .edges
            .values()
            .any(|e| e.buffer.len() == self.buffer_capacity);
        if all_default && !any_full_buffer {
            self.idle_cycles += 1;
            return Err(CloudError::NoTrainableEdge);
        }

        // Only edges with data can train; with full banks the buffer is
        // necessarily non-empty, so this bites only in bootstrap states.
        let candidates: Vec<EdgeUrgency> = urgencies
            .iter()
            .filter(|(id, _)| !self.edges[id].buffer.is_empty())
            .map(|(id, d)| EdgeUrgency {
                edge_id: id.clone(),
                degree: *d,
                last_update_time: self.edges[id].last_update_time,
            })
            .collect();
        if candidates.is_empty() {
            self.idle_cycles += 1;
            return Err(CloudError::NoTrainableEdge);
        }
        let selected = select_edge(&candidates)?;
        self.train_edge_early_stop(&selected, clock, sink)
    }

    /// Early-stopped training of one named edge on its labeled buffer,
    /// dispatching the best-epoch checkpoint. `run_cycle` calls this
    /// after urgency selection; the one-time baseline calls it directly.
    pub fn train_edge_early_stop(
        &mut self,
        selected: &EdgeId,
        clock: &dyn Clock,
        sink: &dyn CostSink,
    ) -> Result<(Message, CycleRecord), CloudError> {
        let urgencies = self.urgency_snapshot();
        let label_seconds = std::mem::take(&mut self.pending_label_seconds);
        let profile_start = clock.now();
        sink.charge(self.costs.profiling_seconds);
        let profiling_seconds = clock.now() - profile_start;

        let trainer_cfg = self.trainer_cfg.clone();
        let costs = self.costs;
        let entry = self
            .edges
            .get_mut(selected)
            .ok_or_else(|| CloudError::UnknownEdge(selected.clone()))?;
        if entry.buffer.is_empty() {
            self.idle_cycles += 1;
            return Err(CloudError::NoTrainableEdge);
        }
        let train_set: Vec<LabeledSample> = entry.buffer.iter().cloned().collect();
        let train_start = clock.now();
        let report = {
            let mut costed = CostedModel {
                inner: &mut entry.model,
                sink,
                seconds_per_sample_epoch: costs.train_seconds_per_sample_epoch,
            };
            train_until_stop(&mut costed, &train_set, &trainer_cfg, clock)?
        };
        let train_seconds = clock.now() - train_start;

        entry.version += 1;
        let msg = Message::ModelUpdate {
            edge_id: selected.clone(),
            version: entry.version,
            trainable_values: report.delta.clone(),
        };
        let bytes = proto::encode(&msg)
            .expect("model update always encodes")
            .len() as u64;
        let dispatch_start = clock.now();
        sink.charge(costs.dispatch_seconds_per_kib * bytes as f64 / 1024.0);
        let dispatch_seconds = clock.now() - dispatch_start;

        entry.bank.clear();
        entry.last_update_time = clock.now();
        self.cycles_run += 1;

        let record = CycleRecord {
            selected_edge: selected.clone(),
            urgencies,
            epochs_run: report.epochs_run,
            best_eval: report.best_eval,
            stop_reason: report.stop_reason,
            train_set_size: train_set.len(),
            label_seconds,
            profiling_seconds,
            train_seconds,
            dispatch_seconds,
            total_seconds: label_seconds + profiling_seconds + train_seconds + dispatch_seconds,
            dispatched_bytes: bytes,
            completed_at: clock.now(),
        };
        log::info!(
            "cycle {}: edge {} epochs {} stop {:?} label {:.3}s train {:.3}s dispatch {:.3}s",
            self.cycles_run,
            record.selected_edge,
            record.epochs_run,
            record.stop_reason,
            record.label_seconds,
            record.train_seconds,
            record.dispatch_seconds,
        );
        Ok((msg, record))
    }

    /// Fixed-epoch training of one named edge, bypassing urgency
    /// selection — the comparator baselines' training path. Ships the
    /// last epoch's parameters, never a checkpoint.
    pub fn train_edge_fixed(
        &mut self,
        edge_id: &EdgeId,
        epochs: u32,
        clock: &dyn Clock,
        sink: &dyn CostSink,
    ) -> Result<(Message, CycleRecord), CloudError> {
        let urgencies = self.urgency_snapshot();
        let trainer_cfg = self.trainer_cfg.clone();
        let costs = self.costs;
        let entry = self
            .edges
            .get_mut(edge_id)
            .ok_or_else(|| CloudError::UnknownEdge(edge_id.clone()))?;
        if entry.buffer.is_empty() {
            self.idle_cycles += 1;
            return Err(CloudError::NoTrainableEdge);
        }
        let label_seconds = std::mem::take(&mut self.pending_label_seconds);
        let profile_start = clock.now();
        sink.charge(costs.profiling_seconds);
        let profiling_seconds = clock.now() - profile_start;

        let train_set: Vec<LabeledSample> = entry.buffer.iter().cloned().collect();
        let (train_part, eval_part) = crate::trainer::split_train_eval(
            &train_set,
            trainer_cfg.eval_fraction,
            trainer_cfg.split_seed,
        );
        let train_start = clock.now();
        let mut best_eval = 0.0f64;
        {
            let mut costed = CostedModel {
                inner: &mut entry.model,
                sink,
                seconds_per_sample_epoch: costs.train_seconds_per_sample_epoch,
            };
            costed.begin_session();
            for _ in 0..epochs {
                costed
                    .train_epoch(&train_part, &trainer_cfg.hyperparams)
                    .map_err(|e| CloudError::Train(TrainError::ModelRejectedHyperparams(e)))?;
                best_eval = best_eval.max(costed.evaluate(&eval_part));
            }
        }
        let train_seconds = clock.now() - train_start;

        entry.version += 1;
        let msg = Message::ModelUpdate {
            edge_id: edge_id.clone(),
            version: entry.version,
            trainable_values: entry.model.trainable_snapshot(),
        };
        let bytes = proto::encode(&msg)
            .expect("model update always encodes")
            .len() as u64;
        let dispatch_start = clock.now();
        sink.charge(costs.dispatch_seconds_per_kib * bytes as f64 / 1024.0);
        let dispatch_seconds = clock.now() - dispatch_start;

        entry.bank.clear();
        entry.last_update_time = clock.now();
        self.cycles_run += 1;

        let record = CycleRecord {
            selected_edge: edge_id.clone(),
            urgencies,
            epochs_run: epochs,
            best_eval,
            stop_reason: StopReason::FixedBudget,
            train_set_size: train_set.len(),
            label_seconds,
            profiling_seconds,
            train_seconds,
            dispatch_seconds,
            total_seconds: label_seconds + profiling_seconds + train_seconds + dispatch_seconds,
            dispatched_bytes: bytes,
            completed_at: clock.now(),
        };
        Ok((msg, record))
    }
}

// ---------------------------------------------------------------------------
// TCP service
// ---------------------------------------------------------------------------

/// Configuration for the socket-mode service loop.
pub struct ServeConfig {
    pub cycle_poll_seconds: f64,
    /// Ground-truth tables by edge id, regenerated from the shared
    /// workload config.
    pub truth_tables: BTreeMap<EdgeId, Vec<usize>>,
}

enum CoordEvent {
    Inbound(u64, Message),
    Disconnected(u64),
}

/// Accepts edge connections and runs ingest concurrently with a single
/// sequential cycle loop until `shutdown` is set. Registration validates
/// the frozen checksum; mismatched edges are rejected and disconnected.
pub fn serve(
    listener: TcpListener,
    mut coordinator: Coordinator,
    cfg: ServeConfig,
    shutdown: Arc<AtomicBool>,
) -> std::io::Result<()> {
    let clock = crate::clock::WallClock::new();
    let sink = crate::clock::NullCostSink;
    let (event_tx, event_rx) = mpsc::channel::<CoordEvent>();

    listener.set_nonblocking(true)?;
    let mut writers: BTreeMap<u64, mpsc::Sender<Vec<u8>>> = BTreeMap::new();
    let mut edges_by_conn: BTreeMap<u64, EdgeId> = BTreeMap::new();
    let mut conns_by_edge: BTreeMap<EdgeId, u64> = BTreeMap::new();
    let mut next_conn_id: u64 = 0;
    let mut last_cycle = std::time::Instant::now();

    while !shutdown.load(Ordering::Relaxed) {
        // Accept new connections.
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("connection from {peer}");
                stream.set_nonblocking(false)?;
                let conn_id = next_conn_id;
                next_conn_id += 1;
                let (write_tx, write_rx) = mpsc::channel::<Vec<u8>>();
                writers.insert(conn_id, write_tx);
                spawn_connection_threads(stream, conn_id, event_tx.clone(), write_rx);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {}
            Err(e) => return Err(e),
        }

        // Drain inbound messages into the coordinator (the mailbox).
        while let Ok(event) = event_rx.try_recv() {
            match event {
                CoordEvent::Inbound(conn_id, msg) => handle_message(
                    &mut coordinator,
                    &cfg,
                    &clock,
                    &sink,
                    conn_id,
                    msg,
                    &mut writers,
                    &mut edges_by_conn,
                    &mut conns_by_edge,
                ),
                CoordEvent::Disconnected(conn_id) => {
                    writers.remove(&conn_id);
                    if let Some(edge) = edges_by_conn.remove(&conn_id) {
                        conns_by_edge.remove(&edge);
                        log::info!("edge {edge} disconnected");
                    }
                }
            }
        }

        // Periodic training cycle; ingest queues while it runs.
        if last_cycle.elapsed().as_secs_f64() >= cfg.cycle_poll_seconds {
            last_cycle = std::time::Instant::now();
            match coordinator.run_cycle(&clock, &sink) {
                Ok((msg, record)) => {
                    log::info!(
                        "dispatch v{} to {} after {} epochs",
                        coordinator.edge_version(&record.selected_edge).unwrap_or(0),
                        record.selected_edge,
                        record.epochs_run
                    );
                    if let Some(conn) = conns_by_edge.get(&record.selected_edge) {
                        if let Some(tx) = writers.get(conn) {
                            let _ = tx.send(proto::encode(&msg).expect("encodable"));
                        }
                    }
                }
                Err(CloudError::NoTrainableEdge) => {}
                Err(e) => log::warn!("cycle error: {e}"),
            }
        }

        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    log::info!(
        "shutting down: {} cycles, {} idle",
        coordinator.cycles_run(),
        coordinator.idle_cycles()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn handle_message(
    coordinator: &mut Coordinator,
    cfg: &ServeConfig,
    clock: &dyn Clock,
    sink: &dyn CostSink,
    conn_id: u64,
    msg: Message,
    writers: &mut BTreeMap<u64, mpsc::Sender<Vec<u8>>>,
    edges_by_conn: &mut BTreeMap<u64, EdgeId>,
    conns_by_edge: &mut BTreeMap<EdgeId, u64>,
) {
    match msg {
        Message::Register {
            edge_id,
            feature_dim,
            class_count,
            frozen_checksum,
        } => {
            let truth = match cfg.truth_tables.get(&edge_id) {
                Some(t) => t.clone(),
                None => {
                    log::warn!("edge {edge_id} not in workload config; rejecting");
                    writers.remove(&conn_id);
                    return;
                }
            };
            match coordinator.register(
                edge_id.clone(),
                feature_dim,
                class_count,
                frozen_checksum,
                truth,
                clock.now(),
            ) {
                Ok(()) => {
                    edges_by_conn.insert(conn_id, edge_id.clone());
                    conns_by_edge.insert(edge_id.clone(), conn_id);
                    let ack = Message::UpdateAck {
                        edge_id,
                        version: 0,
                    };
                    if let Some(tx) = writers.get(&conn_id) {
                        let _ = tx.send(proto::encode(&ack).expect("encodable"));
                    }
                }
                Err(CloudError::DuplicateEdge(id)) => {
                    // Reconnection of a known edge keeps its state.
                    edges_by_conn.insert(conn_id, id.clone());
                    conns_by_edge.insert(id.clone(), conn_id);
                    let ack = Message::UpdateAck {
                        edge_id: id.clone(),
                        version: coordinator.edge_version(&id).unwrap_or(0),
                    };
                    if let Some(tx) = writers.get(&conn_id) {
                        let _ = tx.send(proto::encode(&ack).expect("encodable"));
                    }
                }
                Err(e) => {
                    log::warn!("registration rejected: {e}");
                    writers.remove(&conn_id);
                }
            }
        }
        Message::SampleBatch {
            edge_id, samples, ..
        } => {
            if let Err(e) = coordinator.ingest_batch(&edge_id, &samples, sink) {
                log::warn!("ingest from {edge_id} failed: {e}");
            }
        }
        Message::UpdateAck { edge_id, version } => {
            log::debug!("edge {edge_id} acked v{version}");
        }
        Message::ModelUpdate { edge_id, .. } => {
            log::warn!("unexpected ModelUpdate from edge {edge_id}");
        }
    }
}

fn spawn_connection_threads(
    stream: TcpStream,
    conn_id: u64,
    event_tx: mpsc::Sender<CoordEvent>,
    write_rx: mpsc::Receiver<Vec<u8>>,
) {
    let mut reader = stream.try_clone().expect("clone tcp stream");
    let mut writer = stream;
    std::thread::spawn(move || loop {
        match proto::read_message(&mut reader) {
            Ok(msg) => {
                if event_tx.send(CoordEvent::Inbound(conn_id, msg)).is_err() {
                    break;
                }
            }
            Err(_) => {
                let _ = event_tx.send(CoordEvent::Disconnected(conn_id));
                break;
            }
        }
    });
    std::thread::spawn(move || {
        while let Ok(frame) = write_rx.recv() {
            if writer.write_all(&frame).is_err() {
                break;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::modelkit::{generate_stream, WorkloadSpec};
    use crate::types::{HyperParams, ModelParams};

    fn template() -> StudentModel {
        StudentModel::new(16, 32, 6, 7)
    }

    fn coordinator(buffer_capacity: usize) -> Coordinator {
        let trainer_cfg = TrainerConfig::new(5, 60.0, HyperParams::new(0.05, 0.9, 1e-4).unwrap());
        Coordinator::new(
            template(),
            Teacher::perfect(6),
            UrgencyConfig::new(90, 10).unwrap(),
            trainer_cfg,
            CycleCosts::default(),
            buffer_capacity,
        )
    }

    fn register_edge(coord: &mut Coordinator, id: &str, workload_seed: u64) -> Vec<WireSample> {
        let spec = WorkloadSpec::drifting(workload_seed, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let stream = generate_stream(&spec, &EdgeId::new(id));
        let truth: Vec<usize> = stream.iter().map(|s| s.true_class()).collect();
        let t = template();
        coord
            .register(
                EdgeId::new(id),
                t.feature_dim() as u32,
                t.class_count() as u32,
                t.frozen_checksum(),
                truth,
                0.0,
            )
            .unwrap();
        // Wire view of the stream, predictions from the template model.
        stream
            .iter()
            .map(|s| {
                let out = t.infer(s.features()).unwrap();
                WireSample {
                    seq: s.seq(),
                    timestamp: s.timestamp(),
                    features: s.features().to_vec(),
                    probs: out.probs().to_vec(),
                    predicted: out.predicted() as u32,
                }
            })
            .collect()
    }

    #[test]
    fn register_validates_checksum_and_dims() {
        let mut coord = coordinator(2000);
        let err = coord
            .register(EdgeId::new("bad"), 16, 6, 0xbad, vec![], 0.0)
            .unwrap_err();
        assert!(matches!(err, CloudError::ChecksumMismatch { .. }));

        let t = template();
        let err = coord
            .register(
                EdgeId::new("bad-dims"),
                8,
                6,
                t.frozen_checksum(),
                vec![],
                0.0,
            )
            .unwrap_err();
        assert!(matches!(err, CloudError::DimensionMismatch { .. }));
    }

    #[test]
    fn ingest_updates_bank_and_buffer() {
        let mut coord = coordinator(2000);
        let wire = register_edge(&mut coord, "e0", 5);
        let sink = SimClock::new();
        coord
            .ingest_batch(&EdgeId::new("e0"), &wire[..140], &sink)
            .unwrap();
        // Bank caps at 90 newest; buffer keeps all 140.
        assert_eq!(coord.bank_len(&EdgeId::new("e0")), Some(90));
        assert_eq!(coord.buffer_len(&EdgeId::new("e0")), Some(140));
        // Label cost charged per sample.
        assert!((sink.now() - 140.0 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn ingest_perfect_predictions_yield_all_correct_records() {
        let mut coord = coordinator(2000);
        let mut wire = register_edge(&mut coord, "e0", 5);
        // Force predictions equal to truth.
        let truth: Vec<usize> = {
            let spec = WorkloadSpec::drifting(5, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
            generate_stream(&spec, &EdgeId::new("e0"))
                .iter()
                .map(|s| s.true_class())
                .collect()
        };
        for s in wire.iter_mut() {
            s.predicted = truth[s.seq as usize] as u32;
        }
        let sink = SimClock::new();
        coord
            .ingest_batch(&EdgeId::new("e0"), &wire[..50], &sink)
            .unwrap();
        let urg = coord.urgency_snapshot();
        assert_eq!(urg.len(), 1);
        // Bank not full yet: default urgency.
        assert_eq!(urg[0].1, 0.0);
    }

    #[test]
    fn ingest_unknown_edge_is_rejected() {
        let mut coord = coordinator(2000);
        let sink = SimClock::new();
        assert!(matches!(
            coord.ingest_batch(&EdgeId::new("ghost"), &[], &sink),
            Err(CloudError::UnknownEdge(_))
        ));
    }

    #[test]
    fn fresh_registry_idles() {
        let mut coord = coordinator(2000);
        register_edge(&mut coord, "e0", 5);
        let clock = SimClock::new();
        assert_eq!(
            coord.run_cycle(&clock, &clock).unwrap_err(),
            CloudError::NoTrainableEdge
        );
        assert_eq!(coord.idle_cycles(), 1);
    }

    #[test]
    fn cycle_trains_dispatches_and_clears_bank() {
        let mut coord = coordinator(2000);
        let wire = register_edge(&mut coord, "e0", 5);
        let clock = SimClock::new();
        coord
            .ingest_batch(&EdgeId::new("e0"), &wire[..200], &clock)
            .unwrap();
        assert_eq!(coord.bank_len(&EdgeId::new("e0")), Some(90));

        let (msg, record) = coord.run_cycle(&clock, &clock).unwrap();
        match &msg {
            Message::ModelUpdate {
                edge_id,
                version,
                trainable_values,
            } => {
                assert_eq!(edge_id, &EdgeId::new("e0"));
                assert_eq!(*version, 1);
                // Cloud-side model equals the dispatched parameters bitwise.
                let cloud_model = coord.edge_model(&EdgeId::new("e0")).unwrap();
                assert!(ModelParams::bits_equal(
                    cloud_model.params().trainable(),
                    trainable_values
                ));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Bank cleared on dispatch: urgency back to the default.
        assert_eq!(coord.bank_len(&EdgeId::new("e0")), Some(0));
        assert_eq!(coord.urgency_snapshot()[0].1, 0.0);
        assert_eq!(record.train_set_size, 200);
        assert!(record.epochs_run >= 1);
    }

    #[test]
    fn cycle_timing_parts_sum_to_clock_delta() {
        let mut coord = coordinator(2000);
        let wire = register_edge(&mut coord, "e0", 5);
        let clock = SimClock::new();
        let t0 = clock.now();
        coord
            .ingest_batch(&EdgeId::new("e0"), &wire[..200], &clock)
            .unwrap();
        let (_, record) = coord.run_cycle(&clock, &clock).unwrap();
        let elapsed = clock.now() - t0;
        assert!(record.label_seconds > 0.0);
        assert!(record.train_seconds > 0.0);
        assert!(record.dispatch_seconds > 0.0);
        assert!(record.profiling_seconds > 0.0);
        let sum = record.label_seconds
            + record.train_seconds
            + record.dispatch_seconds
            + record.profiling_seconds;
        assert!(
            (sum - elapsed).abs() <= 0.05 * elapsed,
            "parts {sum} vs clock delta {elapsed}"
        );
        assert_eq!(record.total_seconds, sum);
        // Expected charges under the fake clock, component by component.
        assert!((record.label_seconds - 200.0 * 0.2).abs() < 1e-9);
        let expected_train =
            record.epochs_run as f64 * 0.002 * (200.0f64 * (1.0 - 0.2)).round();
        assert!(
            (record.train_seconds - expected_train).abs() < 1e-9,
            "train {} vs expected {expected_train}",
            record.train_seconds
        );
        assert!(
            (record.dispatch_seconds - 0.5 * record.dispatched_bytes as f64 / 1024.0).abs()
                < 1e-9
        );
    }

    #[test]
    fn drifting_edge_outranks_stationary_after_scene_change() {
        let mut coord = coordinator(2000);
        // Stationary edge: single scene; drifting edge: scene change.
        let spec_stat = WorkloadSpec::drifting(31, 1, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let spec_drift = WorkloadSpec::drifting(32, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let t = template();
        for (id, spec) in [("drift", &spec_drift), ("stat", &spec_stat)] {
            let stream = generate_stream(spec, &EdgeId::new(id));
            let truth: Vec<usize> = stream.iter().map(|s| s.true_class()).collect();
            coord
                .register(
                    EdgeId::new(id),
                    16,
                    6,
                    t.frozen_checksum(),
                    truth,
                    0.0,
                )
                .unwrap();
        }
        // Train both models on their first scenes so accuracy is high,
        // then feed records: stationary stays in scene; drifting crosses
        // the boundary at t=300 (seq 600).
        let clock = SimClock::new();
        let feed = |coord: &mut Coordinator, id: &str, spec: &WorkloadSpec, range: std::ops::Range<usize>| {
            let stream = generate_stream(spec, &EdgeId::new(id));
            let model = coord.edge_model(&EdgeId::new(id)).unwrap().clone();
            let wire: Vec<WireSample> = stream[range]
                .iter()
                .map(|s| {
                    let out = model.infer(s.features()).unwrap();
                    WireSample {
                        seq: s.seq(),
                        timestamp: s.timestamp(),
                        features: s.features().to_vec(),
                        probs: out.probs().to_vec(),
                        predicted: out.predicted() as u32,
                    }
                })
                .collect();
            coord
                .ingest_batch(&EdgeId::new(id), &wire, &clock)
                .unwrap();
        };
        // Adapt both models to scene 1 via one cycle each.
        feed(&mut coord, "drift", &spec_drift, 0..300);
        feed(&mut coord, "stat", &spec_stat, 0..300);
        for _ in 0..2 {
            coord.run_cycle(&clock, &clock).unwrap();
        }
        // Refill banks: stationary stays in-scene, drifting crosses into
        // scene 2 (seq 600+). Within 2n samples the drifting edge's
        // urgency exceeds the stationary edge's.
        feed(&mut coord, "stat", &spec_stat, 300..480);
        feed(&mut coord, "drift", &spec_drift, 550..730);
        let urg: BTreeMap<EdgeId, f64> = coord.urgency_snapshot().into_iter().collect();
        let d_drift = urg[&EdgeId::new("drift")];
        let d_stat = urg[&EdgeId::new("stat")];
        assert!(
            d_drift > d_stat,
            "drift urgency {d_drift} must exceed stationary {d_stat}"
        );
        // And the next cycle selects the drifting edge.
        let (_, record) = coord.run_cycle(&clock, &clock).unwrap();
        assert_eq!(record.selected_edge, EdgeId::new("drift"));
    }

    #[test]
    fn symmetric_edges_round_robin_fairly() {
        let mut coord = coordinator(400);
        // Three edges with IDENTICAL streams: urgencies tie exactly, so
        // the oldest-update tie-break must round-robin them.
        let spec = WorkloadSpec::drifting(77, 2, 6, 16, 2.0, 1.0, 2.0, 600.0).unwrap();
        let t = template();
        // All edges share one stream (same workload seed).
        let stream = generate_stream(&spec, &EdgeId::new("shared"));
        let truth: Vec<usize> = stream.iter().map(|s| s.true_class()).collect();
        for id in ["a", "b", "c"] {
            coord
                .register(EdgeId::new(id), 16, 6, t.frozen_checksum(), truth.clone(), 0.0)
                .unwrap();
        }
        let clock = SimClock::new();
        let mut counts: BTreeMap<EdgeId, u64> = BTreeMap::new();
        let mut cursor = 0usize;
        for _ in 0..12 {
            // Identical batches to every edge.
            let model = coord.edge_model(&EdgeId::new("a")).unwrap().clone();
            let wire: Vec<WireSample> = stream[cursor..cursor + 90]
                .iter()
                .map(|s| {
                    let out = model.infer(s.features()).unwrap();
                    WireSample {
                        seq: s.seq(),
                        timestamp: s.timestamp(),
                        features: s.features().to_vec(),
                        probs: out.probs().to_vec(),
                        predicted: out.predicted() as u32,
                    }
                })
                .collect();
            cursor += 90;
            for id in ["a", "b", "c"] {
                coord.ingest_batch(&EdgeId::new(id), &wire, &clock).unwrap();
            }
            let (_, record) = coord.run_cycle(&clock, &clock).unwrap();
            *counts.entry(record.selected_edge).or_default() += 1;
        }
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        assert!(max - min <= 1, "unfair selection counts {counts:?}");
    }
}
