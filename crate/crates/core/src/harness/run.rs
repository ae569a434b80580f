//! Replicated experiment execution and artifact files.
//!
//! Layout of an output directory:
//!
//! ```text
//! runs/<variant>-seed-<seed>.csv       one trajectory per replication
//! aggregate-<variant>-<metric>.csv     k,mae,stderr
//! summary.json                          slope fits, plateaus, final errors
//! manifest.json                         config echo, seeds, timings, failures
//! ```
//!
//! Everything except the timing fields of `manifest.json` is a function of
//! the config alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::glr::unbiasedness_check;
use crate::harness::config::{ExperimentConfig, ExperimentKind};
use crate::mle::run_mle;
use crate::models::{LinearLatentModel, LocationModel, ModelId};
use crate::pde::{run_pde, surrogate_error_sweep, GaussianVariational};
use crate::rates::{aggregate_mae, loglog_fit, summarize};
use crate::record::{Metric, RunFailure, RunRecord, TrajectoryRow, Variant};
use crate::rng::{replication_seed, stream, Stream};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "NMTS_OUT_DIR";

/// Share of failed replications above which a run counts as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per available core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationLog {
    pub index: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub wall_clock_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub started_unix_s: u64,
    pub total_wall_clock_s: f64,
    pub replications: Vec<ReplicationLog>,
    pub failed: usize,
    pub failure_fraction: f64,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn failed_too_often(&self) -> bool {
        self.failure_fraction > MAX_FAILURE_FRACTION
    }

    /// Reads `manifest.json` from an output directory.
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest.json: {e}")))
    }
}

/// `$NMTS_OUT_DIR/<name>`, or `nmts-out/<name>` when the variable is unset.
pub fn default_out_dir(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("nmts-out"));
    root.join(name)
}

struct Writer {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Writer {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        write_file(&self.dir, rel, contents)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }
}

fn write_file(dir: &Path, rel: &str, contents: &str) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

struct TaskOutcome<R> {
    log: ReplicationLog,
    record: Option<RunRecord<R>>,
    /// Trajectory file, absent when the run could not start.
    file: Option<String>,
}

/// Runs every replication of `config` and writes the artifacts.
///
/// Per-replication failures are logged and the rest continue; the manifest
/// is written in every case. Errors only on invalid configs or I/O failures.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<Manifest> {
    config.validate()?;
    let started = Instant::now();
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::create_dir_all(&options.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;
    let mut writer = Writer { dir: options.out_dir.clone(), outputs: Vec::new() };
    let seeds: Vec<u64> = (0..config.replications() as u64).map(|i| replication_seed(config.base_seed, i)).collect();

    let (logs, summary) = pool.install(|| match config.experiment {
        ExperimentKind::Mle | ExperimentKind::RatesMle => {
            trajectory_experiment(config, &mut writer, &[Metric::AbsErr, Metric::TrackingResidual], |i, v| {
                run_mle(&config.mle_config(i)?, v)
            })
        }
        ExperimentKind::Pde => {
            trajectory_experiment(config, &mut writer, &[Metric::MeanAbsErr, Metric::VarAbsErr], |i, v| {
                run_pde(&config.pde_config(i)?, v)
            })
        }
        ExperimentKind::RatesPde => outer_sweep_experiment(config, &mut writer),
        ExperimentKind::GlrCheck => glr_check_experiment(config, &mut writer),
    })?;

    writer.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    let failed = logs.iter().filter(|l| l.failure.is_some()).count();
    writer.outputs.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds,
        workers: pool.current_num_threads(),
        started_unix_s,
        total_wall_clock_s: started.elapsed().as_secs_f64(),
        failure_fraction: if logs.is_empty() { 0.0 } else { failed as f64 / logs.len() as f64 },
        failed,
        replications: logs,
        outputs: writer.outputs,
    };
    write_file(&options.out_dir, "manifest.json", &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    Ok(manifest)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn trajectory_experiment<R, F>(
    config: &ExperimentConfig,
    writer: &mut Writer,
    metrics: &[Metric],
    run: F,
) -> Result<(Vec<ReplicationLog>, Value)>
where
    R: TrajectoryRow + Send,
    F: Fn(u64, Variant) -> Result<RunRecord<R>> + Sync,
{
    let variants = config.variant.variants();
    let tasks: Vec<(Variant, u64)> =
        variants.iter().flat_map(|&v| (0..config.replications() as u64).map(move |i| (v, i))).collect();
    let dir = writer.dir.clone();
    let outcomes: Vec<Result<TaskOutcome<R>>> = tasks
        .par_iter()
        .map(|&(variant, index)| {
            let seed = replication_seed(config.base_seed, index);
            let (result, secs) = timed(|| run(index, variant));
            let (record, failure, file) = match result {
                Ok(rec) => {
                    let rel = format!("runs/{}-seed-{seed}.csv", variant.name());
                    write_file(&dir, &rel, &rec.to_csv())?;
                    let failure = rec.failure.clone();
                    (failure.is_none().then_some(rec), failure, Some(rel))
                }
                Err(e) => (None, Some(RunFailure { k: 0, cause: e.to_string() }), None),
            };
            let log = ReplicationLog { index, seed, variant: Some(variant), wall_clock_s: secs, failure };
            Ok(TaskOutcome { log, record, file })
        })
        .collect();

    let checkpoints = config.checkpoints.resolve(config.iterations());
    let mut logs = Vec::with_capacity(tasks.len());
    let mut by_variant: BTreeMap<&'static str, Vec<RunRecord<R>>> = BTreeMap::new();
    for outcome in outcomes {
        let outcome = outcome?;
        let variant = outcome.log.variant.expect("set above");
        writer.outputs.extend(outcome.file);
        if let Some(rec) = outcome.record {
            by_variant.entry(variant.name()).or_default().push(rec);
        }
        logs.push(outcome.log);
    }
    let mut per_variant = serde_json::Map::new();
    for variant in &variants {
        let records = by_variant.remove(variant.name()).unwrap_or_default();
        let mut entry = serde_json::Map::new();
        entry.insert("completed_replications".into(), json!(records.len()));
        if !records.is_empty() {
            for &metric in metrics {
                let series = aggregate_mae(&records, metric, &checkpoints)?;
                writer.write(&format!("aggregate-{}-{}.csv", variant.name(), metric.name()), &series.to_csv())?;
                entry.insert(metric.name().into(), json!(summarize(&series, metric, config.tail_fraction)));
            }
        }
        per_variant.insert(variant.name().into(), Value::Object(entry));
    }
    let summary = json!({
        "name": config.name,
        "experiment": config.experiment,
        "redraw_observations": config.redraw_observations,
        "tail_fraction": config.tail_fraction,
        "variants": per_variant,
    });
    Ok((logs, summary))
}

fn outer_sweep_experiment(config: &ExperimentConfig, writer: &mut Writer) -> Result<(Vec<ReplicationLog>, Value)> {
    let counts = config.outer_counts();
    let domain = config.box_domain()?;
    let l0 = config.lambda0.unwrap_or([0.0, 1.0]);
    let start = GaussianVariational::new(l0[0], l0[1]);
    let dir = writer.dir.clone();
    let results: Vec<Result<(ReplicationLog, Option<Vec<f64>>)>> = (0..config.replications() as u64)
        .into_par_iter()
        .map(|index| {
            let seed = replication_seed(config.base_seed, index);
            let (sweep, secs) =
                timed(|| surrogate_error_sweep(&config.observations(index)?.values, &counts, seed, &domain, start));
            let mut log = ReplicationLog { index, seed, variant: None, wall_clock_s: secs, failure: None };
            match sweep {
                Ok(points) => {
                    let mut csv = String::from("n_outer,mu,sigma,error\n");
                    for p in &points {
                        writeln!(csv, "{},{},{},{}", p.n_outer, p.optimum.mu, p.optimum.sigma, p.error).unwrap();
                    }
                    write_file(&dir, &format!("runs/outer-seed-{seed}.csv"), &csv)?;
                    Ok((log, Some(points.iter().map(|p| p.error).collect())))
                }
                Err(e) => {
                    log.failure = Some(RunFailure { k: 0, cause: e.to_string() });
                    Ok((log, None))
                }
            }
        })
        .collect();
    let mut logs = Vec::new();
    let mut errors: Vec<Vec<f64>> = Vec::new();
    for r in results {
        let (log, errs) = r?;
        if let Some(e) = errs {
            writer.outputs.push(format!("runs/outer-seed-{}.csv", log.seed));
            errors.push(e);
        }
        logs.push(log);
    }
    let mut csv = String::from("n_outer,mean_error,stderr\n");
    let mut means = Vec::new();
    for (j, &m) in counts.iter().enumerate() {
        let mut col: Vec<f64> = errors.iter().map(|e| e[j]).collect();
        col.sort_by(f64::total_cmp);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        writeln!(csv, "{m},{mean},{}", sd / n.sqrt()).unwrap();
        means.push(mean);
    }
    writer.write("aggregate-outer.csv", &csv)?;
    let xs: Vec<f64> = counts.iter().map(|&m| m as f64).collect();
    let fit = loglog_fit(&xs, &means).ok().map(|(slope, intercept, r2)| json!({"slope": slope, "intercept": intercept, "r2": r2}));
    let summary = json!({
        "name": config.name,
        "experiment": config.experiment,
        "outer_counts": counts,
        "mean_error": means,
        "fit": fit,
        "completed_replications": errors.len(),
    });
    Ok((logs, summary))
}

fn glr_check_experiment(config: &ExperimentConfig, writer: &mut Writer) -> Result<(Vec<ReplicationLog>, Value)> {
    let dir = writer.dir.clone();
    let results: Vec<Result<(ReplicationLog, Vec<Value>)>> = (0..config.replications() as u64)
        .into_par_iter()
        .map(|index| {
            let seed = replication_seed(config.base_seed, index);
            let mut rng = stream(seed, Stream::Inner);
            let (checks, secs) = timed(|| {
                config
                    .glr_points
                    .iter()
                    .map(|p| match config.model {
                        ModelId::Location => unbiasedness_check(&LocationModel, &[p.theta], p.y, config.n_inner(), &mut rng),
                        ModelId::LinearLatent => {
                            unbiasedness_check(&LinearLatentModel, &[p.theta], p.y, config.n_inner(), &mut rng)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            });
            let mut log = ReplicationLog { index, seed, variant: None, wall_clock_s: secs, failure: None };
            match checks {
                Ok(checks) => {
                    let mut csv = String::from("theta,y,g2_mean,g2_stderr,density,g1_mean,g1_stderr,density_grad,max_z\n");
                    for c in &checks {
                        writeln!(
                            csv,
                            "{},{},{},{},{},{},{},{},{}",
                            c.theta[0], c.y, c.g2_mean, c.g2_stderr, c.density, c.g1_mean[0], c.g1_stderr[0], c.density_grad[0], c.max_z()
                        )
                        .unwrap();
                    }
                    write_file(&dir, &format!("runs/glr-seed-{seed}.csv"), &csv)?;
                    let values = checks.iter().map(|c| json!({"check": c, "max_z": c.max_z()})).collect();
                    Ok((log, values))
                }
                Err(e) => {
                    log.failure = Some(RunFailure { k: 0, cause: e.to_string() });
                    Ok((log, Vec::new()))
                }
            }
        })
        .collect();
    let mut logs = Vec::new();
    let mut all = Vec::new();
    for r in results {
        let (log, values) = r?;
        if log.failure.is_none() {
            writer.outputs.push(format!("runs/glr-seed-{}.csv", log.seed));
        }
        all.push(json!({"seed": log.seed, "points": values}));
        logs.push(log);
    }
    let summary = json!({"name": config.name, "experiment": config.experiment, "model": config.model, "replications": all});
    Ok((logs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets::preset;

    fn small(name: &str) -> ExperimentConfig {
        let mut cfg = preset(name).unwrap();
        cfg.replications = 2;
        cfg.iterations = 200;
        cfg.n_inner = 20;
        cfg
    }

    #[test]
    fn two_replications_give_two_trajectories_per_variant() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { variant: crate::harness::config::VariantSelection::Nmts, ..small("table1-row-N1e2") };
        let m = run_experiment(&cfg, &RunOptions { out_dir: dir.path().into(), workers: 1 }).unwrap();
        assert_eq!(m.seeds, vec![0, 1]);
        assert_eq!(m.failed, 0);
        let runs = fs::read_dir(dir.path().join("runs")).unwrap().count();
        assert_eq!(runs, 2);
        assert!(dir.path().join("aggregate-nmts-abs_err.csv").exists());
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count() {
        let cfg = small("table2-row-N1e2");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &RunOptions { out_dir: a.path().into(), workers: 1 }).unwrap();
        run_experiment(&cfg, &RunOptions { out_dir: b.path().into(), workers: 3 }).unwrap();
        for f in ["aggregate-nmts-mean_abs_err.csv", "aggregate-sts-var_abs_err.csv", "summary.json", "runs/sts-seed-1.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn failures_are_logged_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        // with a single observation the closed-form MLE often does not exist
        let mut cfg = small("table1-row-N1e2");
        cfg.variant = crate::harness::config::VariantSelection::Nmts;
        cfg.n_obs = 1;
        cfg.replications = 8;
        let m = run_experiment(&cfg, &RunOptions { out_dir: dir.path().into(), workers: 1 }).unwrap();
        assert_eq!(m.replications.len(), 8);
        assert!(m.failed > 0 && m.failed < 8, "{}", m.failed);
        assert!(m.failed_too_often());
        assert_eq!(Manifest::load(dir.path()).unwrap().failed, m.failed);
        let runs = fs::read_dir(dir.path().join("runs")).unwrap().count();
        assert_eq!(runs, 8 - m.failed);
    }

    #[test]
    fn outer_sweep_and_glr_check_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = preset("saa-outer-M").unwrap();
        cfg.replications = 2;
        cfg.outer_counts = Some(vec![1, 10, 100]);
        run_experiment(&cfg, &RunOptions { out_dir: dir.path().into(), workers: 1 }).unwrap();
        let agg = fs::read_to_string(dir.path().join("aggregate-outer.csv")).unwrap();
        assert_eq!(agg.lines().count(), 4);

        let dir = tempfile::tempdir().unwrap();
        let mut cfg = preset("glr-check-location").unwrap();
        cfg.n_inner = 10_000;
        run_experiment(&cfg, &RunOptions { out_dir: dir.path().into(), workers: 1 }).unwrap();
        let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        let z = summary["replications"][0]["points"][0]["max_z"].as_f64().unwrap();
        assert!(z < 5.0, "{z}");
    }
}
