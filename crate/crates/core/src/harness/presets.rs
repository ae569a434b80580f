//! Named experiment presets and the reference settings they are checked against.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::config::{DomainSpec, ExperimentConfig, ExperimentKind, GlrPoint, RedrawObservations, VariantSelection};
use crate::models::ModelId;
use crate::record::CheckpointSpec;
use crate::sa::StepSchedule;

const REFERENCE_TOML: &str = include_str!("../../data/reference_settings.toml");

/// Settings of one reference experiment plus the errors reported per batch size.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceExperiment {
    pub model: ModelId,
    pub theta_true: f64,
    pub n_obs: i64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda0: Option<[f64; 2]>,
    #[serde(default)]
    pub n_outer: Option<i64>,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub iterations: i64,
    pub replications: i64,
    pub schedule: StepSchedule,
    pub batch_sizes: Vec<i64>,
    /// Reported MAE columns keyed by name, aligned with `batch_sizes`.
    #[serde(flatten)]
    pub reported: BTreeMap<String, Vec<f64>>,
}

impl ReferenceExperiment {
    /// Reported value of `column` at batch size `n`.
    pub fn reported_at(&self, column: &str, n: i64) -> Option<f64> {
        let i = self.batch_sizes.iter().position(|&b| b == n)?;
        self.reported.get(column)?.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceSettings {
    pub mle: ReferenceExperiment,
    pub pde: ReferenceExperiment,
}

/// The checked-in reference settings.
pub fn reference_settings() -> ReferenceSettings {
    toml::from_str(REFERENCE_TOML).expect("reference settings parse")
}

/// `1`, `1e1`, `1e2`, … for powers of ten.
fn n_label(n: i64) -> String {
    if n == 1 {
        return "1".into();
    }
    let e = (n as f64).log10().round() as i32;
    if 10i64.pow(e as u32) == n {
        format!("1e{e}")
    } else {
        n.to_string()
    }
}

const SMOKE_PREFIX: &str = "smoke-";
const SMOKE_REPLICATIONS: i64 = 10;

fn table1_row(r: &ReferenceExperiment, n: i64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("table1-row-N{}", n_label(n)),
        experiment: ExperimentKind::Mle,
        variant: VariantSelection::Both,
        model: r.model,
        schedule: r.schedule,
        domain: DomainSpec { lower: r.domain_lower.clone(), upper: r.domain_upper.clone() },
        theta0: r.theta0.clone(),
        lambda0: None,
        theta_true: r.theta_true,
        n_obs: r.n_obs,
        n_inner: n,
        n_outer: None,
        outer_counts: None,
        iterations: r.iterations,
        replications: r.replications,
        base_seed: 0,
        checkpoints: CheckpointSpec::default(),
        redraw_observations: RedrawObservations::PerReplication,
        tail_fraction: crate::rates::DEFAULT_TAIL_FRACTION,
        glr_points: Vec::new(),
        output_dir: None,
    }
}

fn table2_row(r: &ReferenceExperiment, n: i64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("table2-row-N{}", n_label(n)),
        experiment: ExperimentKind::Pde,
        theta0: None,
        lambda0: r.lambda0,
        n_outer: r.n_outer,
        ..table1_row(r, n)
    }
}

fn rate_mle(r: &ReferenceExperiment, n: i64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("rate-mle-N{}", n_label(n)),
        experiment: ExperimentKind::RatesMle,
        schedule: StepSchedule::polynomial(r.schedule.alpha0, 2.0 / 3.0, r.schedule.beta0, 1.0).expect("valid"),
        iterations: 1_000_000,
        ..table1_row(r, n)
    }
}

fn rate_pde(r: &ReferenceExperiment, n: i64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("rate-pde-N{}", n_label(n)),
        schedule: StepSchedule::polynomial(r.schedule.alpha0, 2.0 / 3.0, r.schedule.beta0, 1.0).expect("valid"),
        ..table2_row(r, n)
    }
}

fn saa_outer(r: &ReferenceExperiment) -> ExperimentConfig {
    ExperimentConfig {
        name: "saa-outer-M".into(),
        experiment: ExperimentKind::RatesPde,
        variant: VariantSelection::Nmts,
        n_inner: 1,
        n_outer: None,
        outer_counts: Some(vec![1, 10, 100, 1000]),
        iterations: 1,
        ..table2_row(r, 1)
    }
}

fn glr_check(r: &ReferenceExperiment, model: ModelId, point: GlrPoint) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("glr-check-{}", model.name()),
        experiment: ExperimentKind::GlrCheck,
        variant: VariantSelection::Nmts,
        model,
        n_inner: 1_000_000,
        iterations: 1,
        replications: 1,
        glr_points: vec![point],
        ..table1_row(r, 1)
    }
}

fn full_presets() -> Vec<(ExperimentConfig, &'static str)> {
    let reference = reference_settings();
    let (mle, pde) = (&reference.mle, &reference.pde);
    let mut out = Vec::new();
    for &n in &mle.batch_sizes {
        out.push((table1_row(mle, n), "MLE, linear latent model, NMTS and STS after K iterations"));
    }
    for &n in &pde.batch_sizes {
        out.push((table2_row(pde, n), "Gaussian posterior estimation, location model, NMTS and STS"));
    }
    for n in [100, 10_000] {
        out.push((rate_mle(mle, n), "MLE error curve under the clean polynomial schedule (a = 2/3, b = 1)"));
    }
    out.push((rate_pde(pde, 1000), "posterior error curve under the clean polynomial schedule"));
    out.push((saa_outer(pde), "surrogate maximizer error against the posterior as M grows (analytic scores)"));
    out.push((
        glr_check(mle, ModelId::Location, GlrPoint { theta: 0.3, y: 1.0 }),
        "GLR density and gradient means against closed forms",
    ));
    out.push((
        glr_check(mle, ModelId::LinearLatent, GlrPoint { theta: 1.0, y: 0.5 }),
        "GLR density and gradient means against closed forms",
    ));
    out
}

fn is_table(name: &str) -> bool {
    name.starts_with("table1-") || name.starts_with("table2-")
}

/// Every preset name, full-scale first, then the R = 10 smoke variants of the table rows.
pub fn preset_names() -> Vec<String> {
    let full: Vec<String> = full_presets().into_iter().map(|(c, _)| c.name).collect();
    let smoke: Vec<String> = full.iter().filter(|n| is_table(n)).map(|n| format!("{SMOKE_PREFIX}{n}")).collect();
    full.into_iter().chain(smoke).collect()
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    if let Some(base) = name.strip_prefix(SMOKE_PREFIX) {
        if is_table(base) {
            let mut cfg = preset(base)?;
            cfg.name = name.to_string();
            cfg.replications = SMOKE_REPLICATIONS;
            return Ok(cfg);
        }
    }
    full_presets()
        .into_iter()
        .map(|(c, _)| c)
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}' (see `nmts list`)")))
}

/// One line per preset.
pub fn list_presets() -> String {
    let mut s = String::new();
    let full = full_presets();
    for (cfg, what) in &full {
        writeln!(s, "{:<24} {}", cfg.name, what).unwrap();
    }
    for (cfg, _) in full.iter().filter(|(c, _)| is_table(&c.name)) {
        writeln!(s, "{:<24} {} with R = {SMOKE_REPLICATIONS}", format!("{SMOKE_PREFIX}{}", cfg.name), cfg.name).unwrap();
    }
    s
}

/// The preset's full configuration, plus reported errors for table rows.
pub fn describe(name: &str) -> Result<String> {
    let cfg = preset(name)?;
    let mut s = format!("# preset {name}\n");
    let reference = reference_settings();
    let base = name.strip_prefix(SMOKE_PREFIX).unwrap_or(name);
    let (r, cols): (&ReferenceExperiment, &[&str]) = if base.starts_with("table1-") {
        (&reference.mle, &["nmts_mae", "sts_mae"])
    } else if base.starts_with("table2-") {
        (&reference.pde, &["nmts_mean_mae", "sts_mean_mae", "nmts_var_mae", "sts_var_mae"])
    } else {
        (&reference.mle, &[])
    };
    for col in cols {
        if let Some(v) = r.reported_at(col, cfg.n_inner) {
            writeln!(s, "# reported {col} = {v:e}").unwrap();
        }
    }
    s.push_str(&cfg.to_toml());
    Ok(s)
}

/// Compares every table preset with the reference settings; returns one line per check.
pub fn selftest() -> Result<String> {
    let reference = reference_settings();
    let mut report = String::new();
    let mut failures = Vec::new();
    let mut check = |name: &str, what: &str, ok: bool| {
        writeln!(report, "{} {name}: {what}", if ok { "ok  " } else { "FAIL" }).unwrap();
        if !ok {
            failures.push(format!("{name}: {what}"));
        }
    };
    for name in preset_names().iter().filter(|n| is_table(n.strip_prefix(SMOKE_PREFIX).unwrap_or(n))) {
        let cfg = preset(name)?;
        let r = if cfg.experiment == ExperimentKind::Mle { &reference.mle } else { &reference.pde };
        check(name, "model", cfg.model == r.model);
        check(name, "theta_true", cfg.theta_true == r.theta_true);
        check(name, "n_obs", cfg.n_obs == r.n_obs);
        check(name, "domain", cfg.domain.lower == r.domain_lower && cfg.domain.upper == r.domain_upper);
        check(name, "schedule", cfg.schedule == r.schedule);
        check(name, "iterations", cfg.iterations == r.iterations);
        check(name, "theta0", cfg.theta0 == r.theta0);
        check(name, "lambda0", cfg.lambda0 == r.lambda0);
        check(name, "n_outer", cfg.n_outer == r.n_outer);
        check(name, "batch size listed", r.batch_sizes.contains(&cfg.n_inner));
        let expected_reps = if name.starts_with(SMOKE_PREFIX) { SMOKE_REPLICATIONS } else { r.replications };
        check(name, "replications", cfg.replications == expected_reps);
        check(name, "validates", cfg.validate().is_ok());
    }
    for name in preset_names() {
        check(&name, "validates", preset(&name)?.validate().is_ok());
    }
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(Error::Config(format!("preset self-test failed:\n{}", failures.join("\n"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa::ScheduleKind;

    #[test]
    fn table1_row_n1e4_settings() {
        let cfg = preset("table1-row-N1e4").unwrap();
        assert_eq!(cfg.n_inner, 10_000);
        assert_eq!(cfg.n_obs, 100);
        assert_eq!(cfg.theta0, Some(vec![0.8]));
        assert_eq!((cfg.domain.lower.clone(), cfg.domain.upper.clone()), (vec![0.5], vec![2.0]));
        assert_eq!(cfg.theta_true, 1.0);
        assert_eq!(cfg.iterations, 10_000);
        assert_eq!(cfg.schedule.kind, ScheduleKind::PolyLog);
        assert_eq!((cfg.schedule.alpha0, cfg.schedule.beta0, cfg.schedule.b), (20.0, 0.1, 1.0));
        assert!((cfg.schedule.a - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn table2_rows_use_posterior_settings() {
        let cfg = preset("table2-row-N1e2").unwrap();
        assert_eq!((cfg.n_obs, cfg.n_outer, cfg.lambda0), (10, Some(10), Some([0.0, 1.0])));
        assert_eq!(cfg.domain.lower, vec![-1.0, 0.01]);
        assert_eq!(cfg.iterations, 50_000);
        assert_eq!(reference_settings().pde.reported_at("sts_mean_mae", 100), Some(1.69e-1));
    }

    #[test]
    fn listing_and_describe() {
        assert!(list_presets().contains("table1-row-N1 "));
        assert!(preset_names().contains(&"smoke-table2-row-N1e3".to_string()));
        let d = describe("table1-row-N1e2").unwrap();
        assert!(d.contains("alpha0 = 20.0") && d.contains("beta0 = 0.1"), "{d}");
        assert!(d.contains("reported sts_mae = 3.59e-1"), "{d}");
        assert!(matches!(preset("table9"), Err(Error::Config(_))));
        assert!(describe("smoke-rate-mle-N1e2").is_err());
    }

    #[test]
    fn smoke_presets_shrink_only_replications() {
        let full = preset("table1-row-N1e3").unwrap();
        let smoke = preset("smoke-table1-row-N1e3").unwrap();
        assert_eq!(smoke.replications, 10);
        assert_eq!(ExperimentConfig { name: full.name.clone(), replications: full.replications, ..smoke }, full);
    }

    #[test]
    fn selftest_passes() {
        let report = selftest().unwrap();
        assert!(!report.contains("FAIL"));
    }

    #[test]
    fn labels() {
        assert_eq!(n_label(1), "1");
        assert_eq!(n_label(10), "1e1");
        assert_eq!(n_label(100_000), "1e5");
        assert_eq!(n_label(250), "250");
    }
}
