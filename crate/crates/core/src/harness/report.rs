//! Run reports and their flat-table renderings.

use serde::{Deserialize, Serialize};

use crate::cloud::CycleRecord;
use crate::edge::WindowStat;
use crate::types::EdgeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSeries {
    pub edge_id: EdgeId,
    pub windows: Vec<WindowStat>,
    pub inferences: u64,
    pub correct: u64,
}

impl EdgeSeries {
    pub fn accuracy(&self) -> f64 {
        if self.inferences == 0 {
            return 0.0;
        }
        self.correct as f64 / self.inferences as f64
    }
}

/// Everything one simulation produced. Serialized as canonical JSON;
/// identical seeds yield byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    /// Correct / total over every inference of every edge.
    pub overall_accuracy: f64,
    pub total_inferences: u64,
    pub total_correct: u64,
    pub update_count: u64,
    pub bytes_uploaded: u64,
    pub bytes_downloaded: u64,
    pub uploaded_samples: u64,
    pub idle_cycles: u64,
    pub sim_seconds: f64,
    pub per_edge: Vec<EdgeSeries>,
    pub cycles: Vec<CycleRecord>,
    /// Snapshot of the effective configuration, for provenance.
    pub config_snapshot: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn mean_cycle_total_seconds(&self) -> f64 {
        if self.cycles.is_empty() {
            return 0.0;
        }
        self.cycles.iter().map(|c| c.total_seconds).sum::<f64>() / self.cycles.len() as f64
    }

    pub fn mean_profiling_share(&self) -> f64 {
        if self.cycles.is_empty() {
            return 0.0;
        }
        let profiling: f64 = self.cycles.iter().map(|c| c.profiling_seconds).sum();
        let total: f64 = self.cycles.iter().map(|c| c.total_seconds).sum();
        if total == 0.0 {
            0.0
        } else {
            profiling / total
        }
    }
}

/// Flat comma-separated table of per-window stats, one row per window.
pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "strategy,seed,edge_id,window_id,close_time,inferences,correct,accuracy,version,uploaded\n",
    );
    for series in &report.per_edge {
        for w in &series.windows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{},{}\n",
                report.strategy,
                report.seed,
                series.edge_id,
                w.window_id,
                w.close_time,
                w.inferences,
                w.correct,
                w.accuracy(),
                w.version,
                w.uploaded,
            ));
        }
    }
    out
}

/// Accuracy-vs-time series for plotting (values only).
pub fn time_series_csv(report: &RunReport) -> String {
    let mut out = String::from("edge_id,close_time,accuracy,version\n");
    for series in &report.per_edge {
        for w in &series.windows {
            if w.inferences == 0 {
                continue;
            }
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                series.edge_id,
                w.close_time,
                w.accuracy(),
                w.version
            ));
        }
    }
    out
}
