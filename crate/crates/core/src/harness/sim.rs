//! The deterministic simulation engine.
//!
//! One timeline drives three event kinds in priority order at equal
//! times: edge window ticks, sample arrivals, then cloud actions. The
//! shared clock is the cloud's busy frontier — it advances only through
//! modeled costs — while samples and ticks carry their own logical
//! times. Model updates dispatched at cloud completion time `t_d` are
//! applied to an edge just before its first sample at or after `t_d`, so
//! inference keeps using outdated parameters while retraining runs,
//! exactly as a live system would.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clock::{Clock, SimClock};
use crate::cloud::{CloudError, Coordinator, CycleRecord};
use crate::edge::EdgeState;
use crate::modelkit::{generate_stream, StudentModel, Teacher, WorkloadSpec};
use crate::proto::{self, Message};
use crate::trainer::{LabeledSample, TrainableModel, TrainerConfig};
use crate::types::{EdgeId, FilterConfig, HyperParams, Sample};

use super::manifest::Manifest;
use super::report::{EdgeSeries, RunReport};
use super::{HarnessError, Strategy};

struct SimEdge {
    state: EdgeState,
    stream: Vec<Sample>,
    next: usize,
    /// Dispatched updates awaiting their application time.
    pending: VecDeque<(f64, u64, Vec<f64>)>,
}

struct Job {
    edge_id: EdgeId,
    msg: Message,
    available_at: f64,
}

enum Event {
    Tick(f64),
    Sample(f64, usize),
    Cloud(f64),
}

pub(super) struct Engine<'m> {
    manifest: &'m Manifest,
    strategy: Strategy,
    seed: u64,
    clock: SimClock,
    edges: Vec<SimEdge>,
    coordinator: Option<Coordinator>,
    filter_cfg: FilterConfig,
    queue: VecDeque<Job>,
    cloud_ready: f64,
    next_tick: Option<f64>,
    one_time_fired: bool,
    total_seconds: f64,
    bytes_up: u64,
    bytes_down: u64,
    uploaded_samples: u64,
    cycles: Vec<CycleRecord>,
}

/// Builds the shared pre-trained base model: a student fitted to a
/// mixture drawn from every scene of every workload, mimicking a generic
/// offline-pretrained model that is mediocre everywhere.
fn pretrained_template(
    manifest: &Manifest,
    specs: &[WorkloadSpec],
    seed: u64,
    h0: &HyperParams,
) -> StudentModel {
    let m = &manifest.model;
    let mut model = StudentModel::new(m.feature_dim, m.hidden_dim, m.class_count, m.seed);
    if manifest.run.pretrain_samples_per_scene == 0 {
        return model;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1F7_5EED);
    let mut set = Vec::new();
    for spec in specs {
        for scene in &spec.scenes {
            for _ in 0..manifest.run.pretrain_samples_per_scene {
                let (features, class) = scene.sample(&mut rng);
                set.push(LabeledSample::new(features, class));
            }
        }
    }
    model.begin_session();
    for _ in 0..manifest.run.pretrain_epochs {
        model
            .train_epoch(&set, h0)
            .expect("pretraining on generated data converges");
    }
    model
}

/// One full deterministic simulation of `strategy` over the manifest's
/// workloads. All strategies at a given seed consume identical streams.
pub fn run_experiment(
    manifest: &Manifest,
    strategy: Strategy,
    seed: u64,
) -> Result<RunReport, HarnessError> {
    manifest.validate()?;
    let h0 = manifest
        .hyperparams()
        .map_err(|e| HarnessError::Manifest(e.to_string()))?;

    let mut specs = Vec::new();
    let mut streams = Vec::new();
    for w in &manifest.workloads {
        let spec = manifest.workload_spec(w, seed)?;
        let stream = generate_stream(&spec, &EdgeId::new(w.edge_id.clone()));
        specs.push(spec);
        streams.push(stream);
    }
    let total_seconds = specs
        .iter()
        .map(|s| s.total_seconds)
        .fold(0.0f64, f64::max);

    let template = pretrained_template(manifest, &specs, seed, &h0);

    let edges: Vec<SimEdge> = manifest
        .workloads
        .iter()
        .zip(streams)
        .map(|(w, stream)| SimEdge {
            state: EdgeState::new(EdgeId::new(w.edge_id.clone()), template.clone()),
            stream,
            next: 0,
            pending: VecDeque::new(),
        })
        .collect();

    let coordinator = if strategy == Strategy::NoAdaptation {
        None
    } else {
        let trainer_cfg = TrainerConfig {
            patience_k: manifest.trainer.patience_k,
            max_time: manifest.trainer.max_time,
            hyperparams: h0,
            eval_fraction: manifest.trainer.eval_fraction,
            split_seed: manifest.trainer.split_seed,
        };
        let mut coord = Coordinator::new(
            template.clone(),
            Teacher::new(
                manifest.model.class_count,
                manifest.run.teacher_error_rate,
                seed ^ 0x7EAC_4E11,
            ),
            manifest
                .urgency_config()
                .map_err(|e| HarnessError::Manifest(e.to_string()))?,
            trainer_cfg,
            crate::cloud::CycleCosts {
                label_seconds_per_sample: manifest.costs.label_seconds_per_sample,
                train_seconds_per_sample_epoch: manifest.costs.train_seconds_per_sample_epoch,
                dispatch_seconds_per_kib: manifest.costs.dispatch_seconds_per_kib,
                profiling_seconds: manifest.costs.profiling_seconds,
            },
            manifest.run.buffer_capacity,
        );
        for edge in &edges {
            let truth: Vec<usize> = edge.stream.iter().map(|s| s.true_class()).collect();
            let model = edge.state.model();
            coord
                .register(
                    edge.state.edge_id().clone(),
                    model.feature_dim() as u32,
                    model.class_count() as u32,
                    model.frozen_checksum(),
                    truth,
                    0.0,
                )
                .map_err(HarnessError::Cloud)?;
        }
        Some(coord)
    };

    // Strategy-shaped filtering: the baselines upload whole windows; the
    // fixed-interval timeliness normalizer is its actual window length.
    let filter_cfg = match strategy {
        Strategy::EdgeSync => manifest.filter.clone(),
        Strategy::FixedInterval => FilterConfig {
            keep_fraction: manifest.run.fixed_interval_keep_fraction,
            window_seconds: manifest.run.fixed_interval_seconds,
            ..manifest.filter.clone()
        },
        Strategy::OneTimeAdaptation => FilterConfig {
            keep_fraction: 1.0,
            window_seconds: manifest.run.one_time_seconds,
            ..manifest.filter.clone()
        },
        Strategy::NoAdaptation => manifest.filter.clone(),
    };

    let next_tick = match strategy {
        Strategy::NoAdaptation => Some(manifest.run.stats_window_seconds),
        Strategy::OneTimeAdaptation => Some(manifest.run.one_time_seconds),
        Strategy::FixedInterval => Some(manifest.run.fixed_interval_seconds),
        Strategy::EdgeSync => None,
    };

    let mut engine = Engine {
        manifest,
        strategy,
        seed,
        clock: SimClock::new(),
        edges,
        coordinator,
        filter_cfg,
        queue: VecDeque::new(),
        cloud_ready: 0.0,
        next_tick,
        one_time_fired: false,
        total_seconds,
        bytes_up: 0,
        bytes_down: 0,
        uploaded_samples: 0,
        cycles: Vec::new(),
    };
    engine.run();
    Ok(engine.into_report())
}

impl Engine<'_> {
    fn run(&mut self) {
        loop {
            let mut best: Option<(f64, u8, Event)> = None;
            let consider = |t: f64, priority: u8, ev: Event, best: &mut Option<(f64, u8, Event)>| {
                let better = match best {
                    None => true,
                    Some((bt, bp, _)) => t < *bt || (t == *bt && priority < *bp),
                };
                if better {
                    *best = Some((t, priority, ev));
                }
            };

            if let Some(t) = self.next_tick.filter(|t| *t <= self.total_seconds) {
                consider(t, 0, Event::Tick(t), &mut best);
            }
            if let Some((t, idx)) = self.next_sample() {
                consider(t, 1, Event::Sample(t, idx), &mut best);
            }
            if let Some(t) = self.cloud_event_time() {
                consider(t, 2, Event::Cloud(t), &mut best);
            }

            match best {
                None => break,
                Some((_, _, Event::Tick(t))) => self.handle_tick(t),
                Some((_, _, Event::Sample(t, idx))) => self.handle_sample(t, idx),
                Some((_, _, Event::Cloud(t))) => self.handle_cloud(t),
            }
        }
        self.flush();
    }

    fn next_sample(&self) -> Option<(f64, usize)> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.stream.get(e.next).map(|s| (s.timestamp(), i)))
            .min_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("timestamps are finite")
                    .then(a.1.cmp(&b.1))
            })
    }

    fn cloud_event_time(&self) -> Option<f64> {
        match self.strategy {
            Strategy::NoAdaptation => None,
            Strategy::EdgeSync => {
                Some(self.cloud_ready).filter(|t| *t <= self.total_seconds)
            }
            Strategy::FixedInterval | Strategy::OneTimeAdaptation => self
                .queue
                .front()
                .map(|j| self.cloud_ready.max(j.available_at))
                .filter(|t| *t <= self.total_seconds),
        }
    }

    fn handle_tick(&mut self, t: f64) {
        match self.strategy {
            Strategy::NoAdaptation => {
                for e in &mut self.edges {
                    e.state.drop_window(t);
                }
                self.next_tick = Some(t + self.manifest.run.stats_window_seconds);
            }
            Strategy::OneTimeAdaptation => {
                if !self.one_time_fired {
                    self.one_time_fired = true;
                    self.upload_windows(t, true);
                } else {
                    for e in &mut self.edges {
                        e.state.drop_window(t);
                    }
                }
                self.next_tick = Some(t + self.manifest.run.stats_window_seconds);
            }
            Strategy::FixedInterval => {
                self.upload_windows(t, true);
                self.next_tick = Some(t + self.manifest.run.fixed_interval_seconds);
            }
            Strategy::EdgeSync => unreachable!("EdgeSync has no ticks"),
        }
    }

    /// Closes every non-empty window at `t`, counts the wire bytes, and
    /// either queues the decoded batches (baselines) or ingests them
    /// immediately (the coordinator-driven mode).
    fn upload_windows(&mut self, t: f64, queue_jobs: bool) {
        for e in &mut self.edges {
            let Ok(Some(msg)) = e.state.close_window(&self.filter_cfg, t) else {
                continue;
            };
            // The in-memory transport still runs the real codec so byte
            // accounting and decode behavior match socket mode.
            let frame = proto::encode(&msg).expect("batches encode");
            self.bytes_up += frame.len() as u64;
            let decoded = proto::decode(&frame).expect("round trip");
            if let Message::SampleBatch { ref samples, .. } = decoded {
                self.uploaded_samples += samples.len() as u64;
            }
            if queue_jobs {
                self.queue.push_back(Job {
                    edge_id: e.state.edge_id().clone(),
                    msg: decoded,
                    available_at: t,
                });
            } else if let Some(coord) = self.coordinator.as_mut() {
                if let Message::SampleBatch {
                    edge_id, samples, ..
                } = decoded
                {
                    coord
                        .ingest_batch(&edge_id, &samples, &self.clock)
                        .expect("registered edge ingests");
                }
            }
        }
    }

    fn handle_sample(&mut self, t: f64, idx: usize) {
        let edge = &mut self.edges[idx];
        while edge.pending.front().is_some_and(|&(apply_at, _, _)| apply_at <= t) {
            let (_, version, values) = edge.pending.pop_front().unwrap();
            edge.state
                .apply_update(&edge.state.edge_id().clone(), version, &values)
                .expect("dispatched versions are sequential");
        }
        let sample = edge.stream[edge.next].clone();
        edge.next += 1;
        edge.state.step(sample).expect("stream matches model dims");
    }

    fn handle_cloud(&mut self, t: f64) {
        if self.clock.now() < t {
            self.clock.set(t);
        }
        match self.strategy {
            Strategy::EdgeSync => {
                self.upload_windows(t, false);
                let coord = self.coordinator.as_mut().expect("EdgeSync has a cloud");
                match coord.run_cycle(&self.clock, &self.clock) {
                    Ok((msg, record)) => {
                        self.dispatch(msg);
                        self.cycles.push(record);
                        self.cloud_ready = self.clock.now();
                    }
                    Err(CloudError::NoTrainableEdge) => {
                        self.cloud_ready =
                            self.clock.now() + self.manifest.run.idle_poll_seconds;
                    }
                    Err(e) => panic!("cycle failed: {e}"),
                }
            }
            Strategy::FixedInterval | Strategy::OneTimeAdaptation => {
                let job = self.queue.pop_front().expect("cloud event implies a job");
                let coord = self.coordinator.as_mut().expect("baseline has a cloud");
                if let Message::SampleBatch {
                    edge_id, samples, ..
                } = &job.msg
                {
                    coord
                        .ingest_batch(edge_id, samples, &self.clock)
                        .expect("registered edge ingests");
                }
                let trained = if self.strategy == Strategy::FixedInterval {
                    coord.train_edge_fixed(
                        &job.edge_id,
                        self.manifest.run.fixed_epochs,
                        &self.clock,
                        &self.clock,
                    )
                } else {
                    coord.train_edge_early_stop(&job.edge_id, &self.clock, &self.clock)
                };
                match trained {
                    Ok((msg, record)) => {
                        self.dispatch(msg);
                        self.cycles.push(record);
                    }
                    Err(CloudError::NoTrainableEdge) => {}
                    Err(e) => panic!("baseline training failed: {e}"),
                }
                self.cloud_ready = self.clock.now();
            }
            Strategy::NoAdaptation => unreachable!("no cloud events without a cloud"),
        }
    }

    fn dispatch(&mut self, msg: Message) {
        let frame = proto::encode(&msg).expect("updates encode");
        self.bytes_down += frame.len() as u64;
        let decoded = proto::decode(&frame).expect("round trip");
        if let Message::ModelUpdate {
            edge_id,
            version,
            trainable_values,
        } = decoded
        {
            let apply_at = self.clock.now();
            let edge = self
                .edges
                .iter_mut()
                .find(|e| e.state.edge_id() == &edge_id)
                .expect("dispatch targets a known edge");
            edge.pending.push_back((apply_at, version, trainable_values));
        }
    }

    /// Closes or drops every trailing window at end of stream so each
    /// sample belongs to exactly one window across all strategies.
    fn flush(&mut self) {
        let t = self.total_seconds;
        match self.strategy {
            Strategy::EdgeSync => self.upload_windows(t, false),
            Strategy::FixedInterval => self.upload_windows(t, true),
            Strategy::NoAdaptation | Strategy::OneTimeAdaptation => {
                for e in &mut self.edges {
                    e.state.drop_window(t);
                }
            }
        }
    }

    fn into_report(self) -> RunReport {
        let per_edge: Vec<EdgeSeries> = self
            .edges
            .iter()
            .map(|e| EdgeSeries {
                edge_id: e.state.edge_id().clone(),
                windows: e.state.history().to_vec(),
                inferences: e.state.total_inferences(),
                correct: e.state.total_correct(),
            })
            .collect();
        let total_inferences: u64 = per_edge.iter().map(|e| e.inferences).sum();
        let total_correct: u64 = per_edge.iter().map(|e| e.correct).sum();
        let config_snapshot = format!(
            "strategy = \"{}\"\nseed = {}\n\n{}",
            self.strategy.name(),
            self.seed,
            self.manifest.to_toml()
        );
        RunReport {
            strategy: self.strategy.name().to_string(),
            seed: self.seed,
            overall_accuracy: if total_inferences == 0 {
                0.0
            } else {
                total_correct as f64 / total_inferences as f64
            },
            total_inferences,
            total_correct,
            update_count: self.cycles.len() as u64,
            bytes_uploaded: self.bytes_up,
            bytes_downloaded: self.bytes_down,
            uploaded_samples: self.uploaded_samples,
            idle_cycles: self.coordinator.as_ref().map_or(0, |c| c.idle_cycles()),
            sim_seconds: self.clock.now().max(self.total_seconds),
            per_edge,
            cycles: self.cycles,
            config_snapshot,
        }
    }
}
