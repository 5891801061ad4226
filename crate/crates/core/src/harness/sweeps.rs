//! Parameter sweeps: filter-ratio sensitivity and camera-count scaling.

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::sim::run_experiment;
use super::{HarnessError, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub seed: u64,
    /// Keep fraction for the filter sweep, edge count for the scaling
    /// sweep.
    pub parameter: f64,
    pub overall_accuracy: f64,
    pub update_count: u64,
    pub bytes_uploaded: u64,
    pub mean_cycle_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "strategy,seed,parameter,overall_accuracy,update_count,bytes_uploaded,mean_cycle_seconds\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{:.6}\n",
                r.strategy,
                r.seed,
                r.parameter,
                r.overall_accuracy,
                r.update_count,
                r.bytes_uploaded,
                r.mean_cycle_seconds,
            ));
        }
        out
    }

    pub fn mean_accuracy(&self, strategy: &str, parameter: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.strategy == strategy && r.parameter == parameter)
            .map(|r| r.overall_accuracy)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Runs the fixed-interval strategy with the upload filter set to each
/// fraction, at a fixed model-update interval, across seeds.
pub fn sweep_filter_fraction(
    manifest: &Manifest,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<SweepTable, HarnessError> {
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(HarnessError::Manifest(format!(
                "filter fraction {f} outside (0, 1]"
            )));
        }
    }
    let mut rows = Vec::new();
    for &fraction in fractions {
        let mut m = manifest.clone();
        m.run.fixed_interval_keep_fraction = fraction;
        for &seed in seeds {
            let report = run_experiment(&m, Strategy::FixedInterval, seed)?;
            rows.push(SweepRow {
                strategy: Strategy::FixedInterval.name().to_string(),
                seed,
                parameter: fraction,
                overall_accuracy: report.overall_accuracy,
                update_count: report.update_count,
                bytes_uploaded: report.bytes_uploaded,
                mean_cycle_seconds: report.mean_cycle_total_seconds(),
            });
        }
    }
    Ok(SweepTable {
        name: "filter-fraction".into(),
        rows,
    })
}

/// Runs the fixed-interval and full strategies with the first `count`
/// workloads for each count, sharing the single cloud. Workload sets are
/// nested, so adding cameras never changes existing cameras' streams.
pub fn sweep_edge_count(
    manifest: &Manifest,
    counts: &[usize],
    seeds: &[u64],
) -> Result<SweepTable, HarnessError> {
    let max = *counts.iter().max().unwrap_or(&0);
    if max == 0 || max > manifest.workloads.len() {
        return Err(HarnessError::Manifest(format!(
            "edge counts up to {max} need that many workloads; manifest has {}",
            manifest.workloads.len()
        )));
    }
    let mut rows = Vec::new();
    for &count in counts {
        let mut m = manifest.clone();
        m.workloads.truncate(count);
        for &seed in seeds {
            for strategy in [Strategy::FixedInterval, Strategy::EdgeSync] {
                let report = run_experiment(&m, strategy, seed)?;
                rows.push(SweepRow {
                    strategy: strategy.name().to_string(),
                    seed,
                    parameter: count as f64,
                    overall_accuracy: report.overall_accuracy,
                    update_count: report.update_count,
                    bytes_uploaded: report.bytes_uploaded,
                    mean_cycle_seconds: report.mean_cycle_total_seconds(),
                });
            }
        }
    }
    Ok(SweepTable {
        name: "edge-count".into(),
        rows,
    })
}
