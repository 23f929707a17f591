//! Per-condition metrics table with CSV and JSON renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::pearson;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// CSV header, in column order.
pub const REPORT_COLUMNS: [&str; 17] = [
    "cond_id",
    "g",
    "dup_factor",
    "samples",
    "diverged",
    "mem_score",
    "sim_train",
    "sim_generate",
    "memorized",
    "m1",
    "m2",
    "m3",
    "trace_mid",
    "pc1_early",
    "k_ratio_first",
    "x0_cos_first",
    "x0_sq_l2_first",
];

/// Per-grid-step series, averaged over the seed ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: usize,
    pub trace: f64,
    /// PC1 alignment of the deltas leaving this step; None at the clean endpoint.
    pub pc1: Option<f64>,
    pub pc1_degenerate: bool,
    pub k_ratio: f64,
    pub x0_cos: f64,
    pub x0_sq_l2: f64,
    pub w0: f64,
    pub w_t: f64,
    pub w0_final: f64,
    pub w_t_final: f64,
    pub sched_w0: f64,
    pub sched_w_t: f64,
    pub cos_uncond_xt: f64,
    pub cos_cond_xt: f64,
    pub cos_uncond_diff_negx: f64,
    pub cos_cond_diff_negx: f64,
    pub sq_diff_uncond: f64,
    pub sq_diff_cond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub cond_id: usize,
    pub g: f64,
    pub dup_factor: usize,
    /// Trajectories that stayed finite and entered the aggregates.
    pub samples: usize,
    pub diverged: usize,
    pub mem_score: f64,
    pub sim_train: f64,
    pub sim_generate: f64,
    pub memorized: bool,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub trace_mid: f64,
    pub pc1_early: f64,
    pub k_ratio_first: f64,
    pub x0_cos_first: f64,
    pub x0_sq_l2_first: f64,
    pub series: Vec<SeriesPoint>,
}

impl ConditionMetrics {
    fn csv_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cond_id,
            self.g,
            self.dup_factor,
            self.samples,
            self.diverged,
            self.mem_score,
            self.sim_train,
            self.sim_generate,
            u8::from(self.memorized),
            self.m1,
            self.m2,
            self.m3,
            self.trace_mid,
            self.pc1_early,
            self.k_ratio_first,
            self.x0_cos_first,
            self.x0_sq_l2_first,
        );
    }

    /// Scalar metric by CSV column name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mem_score" => self.mem_score,
            "sim_train" => self.sim_train,
            "sim_generate" => self.sim_generate,
            "m1" => self.m1,
            "m2" => self.m2,
            "m3" => self.m3,
            "trace_mid" => self.trace_mid,
            "pc1_early" => self.pc1_early,
            "k_ratio_first" => self.k_ratio_first,
            "x0_cos_first" => self.x0_cos_first,
            "x0_sq_l2_first" => self.x0_sq_l2_first,
            _ => return None,
        })
    }
}

/// Pearson coefficient of one metric against mem_score across conditions at one g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub g: f64,
    pub metric: String,
    /// None when either side has zero variance.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub threshold: f64,
    /// Timestep of the mid-denoising covariance checkpoint.
    pub checkpoint_t: usize,
    pub rows: Vec<ConditionMetrics>,
    pub correlations: Vec<Correlation>,
}

pub const CORRELATED_METRICS: [&str; 5] = ["m1", "m2", "m3", "trace_mid", "pc1_early"];

impl MetricsReport {
    /// Sorts rows by (cond_id, g) and fills in the correlation table.
    pub fn new(threshold: f64, checkpoint_t: usize, mut rows: Vec<ConditionMetrics>) -> Self {
        rows.sort_by(|a, b| a.cond_id.cmp(&b.cond_id).then(a.g.total_cmp(&b.g)));
        let mut gs: Vec<f64> = rows.iter().map(|r| r.g).collect();
        gs.sort_by(f64::total_cmp);
        gs.dedup();
        let mut correlations = Vec::new();
        for &g in &gs {
            let at: Vec<&ConditionMetrics> = rows.iter().filter(|r| r.g == g).collect();
            let score: Vec<f64> = at.iter().map(|r| r.mem_score).collect();
            for name in CORRELATED_METRICS {
                let xs: Vec<f64> = at.iter().map(|r| r.metric(name).unwrap_or(f64::NAN)).collect();
                correlations.push(Correlation { g, metric: name.to_string(), pearson: pearson(&xs, &score).ok() });
            }
        }
        MetricsReport { version: REPORT_VERSION, threshold, checkpoint_t, rows, correlations }
    }

    pub fn rows_at(&self, g: f64) -> impl Iterator<Item = &ConditionMetrics> {
        self.rows.iter().filter(move |r| r.g == g)
    }

    pub fn row(&self, cond_id: usize, g: f64) -> Option<&ConditionMetrics> {
        self.rows.iter().find(|r| r.cond_id == cond_id && r.g == g)
    }

    pub fn correlation(&self, g: f64, metric: &str) -> Option<f64> {
        self.correlations.iter().find(|c| c.g == g && c.metric == metric).and_then(|c| c.pearson)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            r.csv_row(&mut out);
        }
        out
    }

    /// Correlation summary as a small CSV table.
    pub fn correlations_csv(&self) -> String {
        let mut out = String::from("g,metric,pearson\n");
        for c in &self.correlations {
            let p = c.pearson.map_or_else(|| "nan".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{},{},{}", c.g, c.metric, p);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricsReport =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("report parse: {e}")))?;
        if r.version != REPORT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "report version {} (expected {REPORT_VERSION})",
                r.version
            )));
        }
        Ok(r)
    }
}
