//! Error curves over replications, log-log slope fits and plateau levels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Metric, RunRecord, TrajectoryRow};

/// Default share of the checkpoints (from the right) used by slope fits.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.3;

/// Mean absolute error per checkpoint across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub ks: Vec<u64>,
    pub mae: Vec<f64>,
    pub n_reps: usize,
    /// Standard error of the mean; zeros when `stderr_defined` is false.
    pub stderr: Vec<f64>,
    pub stderr_defined: bool,
}

impl ErrorSeries {
    pub fn new(ks: Vec<u64>, mae: Vec<f64>, n_reps: usize, stderr: Option<Vec<f64>>) -> Result<Self> {
        if ks.len() != mae.len() {
            return Err(Error::Contract("ks and mae must have equal lengths".into()));
        }
        if ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("checkpoints must be strictly increasing".into()));
        }
        let (stderr, stderr_defined) = match stderr {
            Some(s) if s.len() == ks.len() => (s, true),
            Some(_) => return Err(Error::Contract("stderr length differs from ks".into())),
            None => (vec![0.0; ks.len()], false),
        };
        Ok(ErrorSeries { ks, mae, n_reps, stderr, stderr_defined })
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    /// Sub-series with `k_lo <= k <= k_hi`.
    pub fn window(&self, k_lo: u64, k_hi: u64) -> ErrorSeries {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.ks[i] >= k_lo && self.ks[i] <= k_hi).collect();
        ErrorSeries {
            ks: idx.iter().map(|&i| self.ks[i]).collect(),
            mae: idx.iter().map(|&i| self.mae[i]).collect(),
            n_reps: self.n_reps,
            stderr: idx.iter().map(|&i| self.stderr[i]).collect(),
            stderr_defined: self.stderr_defined,
        }
    }

    /// `k,mae,stderr` with an empty stderr column when undefined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,mae,stderr\n");
        for i in 0..self.len() {
            if self.stderr_defined {
                writeln!(s, "{},{},{}", self.ks[i], self.mae[i], self.stderr[i]).unwrap();
            } else {
                writeln!(s, "{},{},", self.ks[i], self.mae[i]).unwrap();
            }
        }
        s
    }
}

/// Per-checkpoint mean and standard error of `metric` over `records`.
///
/// Every record must carry the same `config_key` and a row at each checkpoint.
pub fn aggregate_mae<R: TrajectoryRow>(records: &[RunRecord<R>], metric: Metric, checkpoints: &[u64]) -> Result<ErrorSeries> {
    let first = records.first().ok_or_else(|| Error::Contract("no records to aggregate".into()))?;
    if let Some(r) = records.iter().find(|r| r.config_key != first.config_key) {
        return Err(Error::Contract(format!(
            "records differ in configuration: '{}' vs '{}'",
            first.config_key, r.config_key
        )));
    }
    let traces: Vec<Vec<(u64, f64)>> = records.iter().map(|r| r.trace(metric)).collect();
    let n = records.len();
    let mut mae = Vec::with_capacity(checkpoints.len());
    let mut stderr = Vec::with_capacity(checkpoints.len());
    let mut values = Vec::with_capacity(n);
    for &k in checkpoints {
        values.clear();
        for (trace, rec) in traces.iter().zip(records) {
            let i = trace.binary_search_by_key(&k, |p| p.0).map_err(|_| {
                Error::Contract(format!("record with seed {} has no '{}' value at k = {k}", rec.seed, metric.name()))
            })?;
            values.push(trace[i].1.abs());
        }
        // sorted summation keeps the result independent of record order
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n as f64;
        mae.push(mean);
        if n >= 2 {
            let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            dev.sort_by(f64::total_cmp);
            stderr.push((dev.iter().sum::<f64>() / (n - 1) as f64 / n as f64).sqrt());
        }
    }
    ErrorSeries::new(checkpoints.to_vec(), mae, n, (n >= 2).then_some(stderr))
}

/// Ordinary least squares fit of `log mae` on `log k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (u64, u64),
    pub r2: f64,
    pub n_points: usize,
}

/// Fits the final `tail_fraction` of the checkpoints.
pub fn loglog_slope(series: &ErrorSeries, tail_fraction: f64) -> Result<SlopeFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Contract(format!("tail fraction {tail_fraction} outside (0, 1]")));
    }
    let n_tail = ((series.len() as f64) * tail_fraction).ceil() as usize;
    let start = series.len().saturating_sub(n_tail);
    fit(&series.ks[start..], &series.mae[start..])
}

/// Fits every checkpoint with `k_lo <= k <= k_hi`.
pub fn loglog_slope_between(series: &ErrorSeries, k_lo: u64, k_hi: u64) -> Result<SlopeFit> {
    let w = series.window(k_lo, k_hi);
    fit(&w.ks, &w.mae)
}

/// OLS of `log y` on `log x` for arbitrary positive abscissae.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Contract("log-log fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateData("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateData("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok((slope, intercept, r2))
}

fn fit(ks: &[u64], mae: &[f64]) -> Result<SlopeFit> {
    if ks.len() < 5 {
        return Err(Error::Contract(format!("slope window holds {} checkpoints, need at least 5", ks.len())));
    }
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let (slope, intercept, r2) = loglog_fit(&xs, mae)?;
    Ok(SlopeFit { slope, intercept, window: (ks[0], ks[ks.len() - 1]), r2, n_points: ks.len() })
}

/// Mean of the last decile of the series (at least one point).
pub fn plateau_level(series: &ErrorSeries) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    let n = series.len().div_ceil(10);
    let tail = &series.mae[series.len() - n..];
    tail.iter().sum::<f64>() / n as f64
}

/// Summary written next to the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub metric: Metric,
    pub n_reps: usize,
    pub tail_fraction: f64,
    /// `None` when the series is too short for a fit.
    pub fit: Option<SlopeFit>,
    pub plateau: f64,
    pub final_mae: f64,
}

pub fn summarize(series: &ErrorSeries, metric: Metric, tail_fraction: f64) -> RateSummary {
    RateSummary {
        metric,
        n_reps: series.n_reps,
        tail_fraction,
        fit: loglog_slope(series, tail_fraction).ok(),
        plateau: plateau_level(series),
        final_mae: series.mae.last().copied().unwrap_or(f64::NAN),
    }
}
