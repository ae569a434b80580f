//! Per-run trajectories and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Update rule of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Nested multi-timescale: a fast tracker replaces the ratio.
    Nmts,
    /// Single-timescale plug-in ratio (Robbins–Monro).
    Sts,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nmts => "nmts",
            Variant::Sts => "sts",
        }
    }
}

/// Iterations at which a run records a row. The final iteration is always included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckpointSpec {
    Every,
    /// `start, ceil(start·r), ceil(start·r²), …` (deduplicated).
    Geometric { ratio: f64, start: u64 },
    List { ks: Vec<u64> },
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec::Geometric { ratio: 1.3, start: 1 }
    }
}

impl CheckpointSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CheckpointSpec::Geometric { ratio, start } if !(*ratio > 1.0) || *start == 0 => Err(Error::Config(
                format!("geometric checkpoints need ratio > 1 and start >= 1 (got {ratio}, {start})"),
            )),
            CheckpointSpec::List { ks } if ks.iter().any(|k| *k == 0) => {
                Err(Error::Config("checkpoint list must not contain 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Sorted, unique checkpoints in `[1, iterations]`, ending at `iterations`.
    pub fn resolve(&self, iterations: u64) -> Vec<u64> {
        let mut ks: Vec<u64> = match self {
            CheckpointSpec::Every => (1..=iterations).collect(),
            CheckpointSpec::Geometric { ratio, start } => {
                let mut v = Vec::new();
                let mut x = *start as f64;
                while x <= iterations as f64 {
                    v.push(x.ceil() as u64);
                    x *= ratio;
                }
                v
            }
            CheckpointSpec::List { ks } => ks.iter().copied().filter(|k| *k <= iterations).collect(),
        };
        ks.push(iterations);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub k: u64,
    pub cause: String,
}

/// Error metrics a row can expose for aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `|θ_k − θ̂|` (MLE runs).
    AbsErr,
    /// `|μ_k − posterior mean|` (PDE runs).
    MeanAbsErr,
    /// `|σ_k² − posterior variance|` (PDE runs).
    VarAbsErr,
    /// Tracker residual against the analytic score.
    TrackingResidual,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::AbsErr => "abs_err",
            Metric::MeanAbsErr => "mean_abs_err",
            Metric::VarAbsErr => "var_abs_err",
            Metric::TrackingResidual => "tracking_residual",
        }
    }
}

/// One CSV row of a trajectory.
pub trait TrajectoryRow: Clone {
    fn k(&self) -> u64;
    fn metric(&self, metric: Metric) -> Option<f64>;
    fn csv_header(param_dim: usize) -> String;
    fn write_csv(&self, out: &mut String);
}

/// Recorded rows of one seeded replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<R> {
    pub variant: Variant,
    pub seed: u64,
    /// Identifies the configuration apart from the seed; aggregation requires equal keys.
    pub config_key: String,
    pub param_dim: usize,
    pub rows: Vec<R>,
    pub failure: Option<RunFailure>,
}

impl<R: TrajectoryRow> RunRecord<R> {
    pub fn last(&self) -> Option<&R> {
        self.rows.last()
    }

    /// `(k, value)` pairs for `metric`; rows without the metric are skipped.
    pub fn trace(&self, metric: Metric) -> Vec<(u64, f64)> {
        self.rows.iter().filter_map(|r| r.metric(metric).map(|v| (r.k(), v))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = R::csv_header(self.param_dim);
        s.push('\n');
        for r in &self.rows {
            r.write_csv(&mut s);
            s.push('\n');
        }
        s
    }
}

/// Row of an MLE trajectory: `k, theta…, abs_err, tracking_residual, proj_active`.
#[derive(Debug, Clone, PartialEq)]
pub struct MleRow {
    pub k: u64,
    pub theta: Vec<f64>,
    pub abs_err: f64,
    pub tracking_residual: f64,
    pub proj_active: bool,
}

impl TrajectoryRow for MleRow {
    fn k(&self) -> u64 {
        self.k
    }

    fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::AbsErr => Some(self.abs_err),
            Metric::TrackingResidual => Some(self.tracking_residual),
            _ => None,
        }
    }

    fn csv_header(param_dim: usize) -> String {
        let theta = if param_dim == 1 {
            "theta".to_string()
        } else {
            (0..param_dim).map(|j| format!("theta_{j}")).collect::<Vec<_>>().join(",")
        };
        format!("k,{theta},abs_err,tracking_residual,proj_active")
    }

    fn write_csv(&self, out: &mut String) {
        write!(out, "{}", self.k).unwrap();
        for t in &self.theta {
            write!(out, ",{t}").unwrap();
        }
        write!(out, ",{},{},{}", self.abs_err, self.tracking_residual, u8::from(self.proj_active)).unwrap();
    }
}

/// Row of a PDE trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeRow {
    pub k: u64,
    pub mu: f64,
    pub sigma: f64,
    pub mean_abs_err: f64,
    pub var_abs_err: f64,
    /// `‖S_k − h̄(λ_k)‖`, distance of the assembled drift from the surrogate gradient.
    pub sk_residual: f64,
    pub max_block_residual: f64,
}

impl TrajectoryRow for PdeRow {
    fn k(&self) -> u64 {
        self.k
    }

    fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::MeanAbsErr => Some(self.mean_abs_err),
            Metric::VarAbsErr => Some(self.var_abs_err),
            Metric::TrackingResidual => Some(self.max_block_residual),
            Metric::AbsErr => None,
        }
    }

    fn csv_header(_param_dim: usize) -> String {
        "k,mu,sigma,mean_abs_err,var_abs_err,sk_residual,max_block_residual".to_string()
    }

    fn write_csv(&self, out: &mut String) {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            self.k, self.mu, self.sigma, self.mean_abs_err, self.var_abs_err, self.sk_residual, self.max_block_residual
        )
        .unwrap();
    }
}
