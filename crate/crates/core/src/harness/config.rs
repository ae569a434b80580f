//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::MleConfig;
use crate::models::{simulate_for, ModelId, ObservationSet};
use crate::pde::{GaussianVariational, PdeConfig};
use crate::record::{CheckpointSpec, Variant};
use crate::rng::replication_seed;
use crate::sa::{BoxDomain, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Replicated MLE runs; error against the closed-form MLE.
    Mle,
    /// Replicated PDE runs; errors against the conjugate posterior.
    Pde,
    /// MLE runs intended for slope fits (clean polynomial schedule).
    RatesMle,
    /// Surrogate maximizer error against the posterior as the outer sample count grows.
    RatesPde,
    /// Monte Carlo means of the GLR estimators against the analytic density and gradient.
    GlrCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantSelection {
    Nmts,
    Sts,
    Both,
}

impl VariantSelection {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantSelection::Nmts => vec![Variant::Nmts],
            VariantSelection::Sts => vec![Variant::Sts],
            VariantSelection::Both => vec![Variant::Nmts, Variant::Sts],
        }
    }
}

/// Whether each replication draws its own observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RedrawObservations {
    #[default]
    PerReplication,
    /// Every replication uses the observations drawn from `base_seed`.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Evaluation point of a GLR check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlrPoint {
    pub theta: f64,
    pub y: f64,
}

fn default_replications() -> i64 {
    100
}

fn default_tail_fraction() -> f64 {
    crate::rates::DEFAULT_TAIL_FRACTION
}

/// One experiment. Counts are signed so that negative values reach
/// [`validate`](ExperimentConfig::validate) and get a named error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    #[serde(default = "both")]
    pub variant: VariantSelection,
    pub model: ModelId,
    pub schedule: StepSchedule,
    pub domain: DomainSpec,
    /// Initial θ (`mle`, `rates-mle`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Initial `(μ, σ)` (`pde`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<[f64; 2]>,
    pub theta_true: f64,
    /// T
    pub n_obs: i64,
    /// N (draws per GLR batch; draws per replication for `glr-check`)
    pub n_inner: i64,
    /// M (`pde`)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_outer: Option<i64>,
    /// Outer sample counts swept by `rates-pde`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_counts: Option<Vec<i64>>,
    /// K
    pub iterations: i64,
    #[serde(default = "default_replications")]
    pub replications: i64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default)]
    pub redraw_observations: RedrawObservations,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    /// Evaluation points of `glr-check`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub glr_points: Vec<GlrPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn both() -> VariantSelection {
    VariantSelection::Both
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

fn positive(name: &str, v: i64) -> Result<usize> {
    if v < 1 {
        return Err(field(name, format!("must be at least 1 (got {v})")));
    }
    Ok(v as usize)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses and validates TOML text. Parse errors carry line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs.max(0) as usize
    }

    pub fn n_inner(&self) -> usize {
        self.n_inner.max(0) as usize
    }

    pub fn iterations(&self) -> u64 {
        self.iterations.max(0) as u64
    }

    pub fn replications(&self) -> usize {
        self.replications.max(0) as usize
    }

    pub fn box_domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.domain.lower.clone(), self.domain.upper.clone()).map_err(|e| field("domain", e))
    }

    pub fn outer_counts(&self) -> Vec<usize> {
        self.outer_counts.iter().flatten().map(|&m| m.max(0) as usize).collect()
    }

    /// Checks every precondition of the experiment before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(field("name", "must not be empty"));
        }
        positive("n_obs", self.n_obs)?;
        positive("n_inner", self.n_inner)?;
        positive("iterations", self.iterations)?;
        positive("replications", self.replications)?;
        self.schedule.validate().map_err(|e| field("schedule", e))?;
        self.checkpoints.validate().map_err(|e| field("checkpoints", e))?;
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(field("tail_fraction", format!("must lie in (0, 1] (got {})", self.tail_fraction)));
        }
        if !self.theta_true.is_finite() {
            return Err(field("theta_true", "must be finite"));
        }
        let domain = self.box_domain()?;
        match self.experiment {
            ExperimentKind::Mle | ExperimentKind::RatesMle => {
                let theta0 = self.theta0.as_ref().ok_or_else(|| field("theta0", "required for MLE experiments"))?;
                if theta0.len() != domain.dim() || !domain.contains(theta0) {
                    return Err(field("theta0", format!("{theta0:?} lies outside the domain {:?}", self.domain)));
                }
                if domain.dim() != 1 {
                    return Err(field("domain", "bundled models have a scalar parameter"));
                }
            }
            ExperimentKind::Pde => {
                let l0 = self.lambda0.ok_or_else(|| field("lambda0", "required for PDE experiments"))?;
                if domain.dim() != 2 || domain.lower()[1] <= 0.0 {
                    return Err(field("domain", "PDE needs a (mu, sigma) box with positive sigma bound"));
                }
                if !domain.contains(&l0) {
                    return Err(field("lambda0", format!("{l0:?} lies outside the domain {:?}", self.domain)));
                }
                positive("n_outer", self.n_outer.ok_or_else(|| field("n_outer", "required for PDE experiments"))?)?;
                if self.model != ModelId::Location {
                    return Err(field("model", "PDE error metrics need the location model"));
                }
            }
            ExperimentKind::RatesPde => {
                let counts = self.outer_counts.as_ref().ok_or_else(|| field("outer_counts", "required for rates-pde"))?;
                if counts.len() < 2 {
                    return Err(field("outer_counts", "need at least two outer sample counts"));
                }
                for &m in counts {
                    positive("outer_counts", m)?;
                }
                if domain.dim() != 2 || domain.lower()[1] <= 0.0 {
                    return Err(field("domain", "rates-pde needs a (mu, sigma) box with positive sigma bound"));
                }
                if self.model != ModelId::Location {
                    return Err(field("model", "rates-pde needs the location model"));
                }
            }
            ExperimentKind::GlrCheck => {
                if self.glr_points.is_empty() {
                    return Err(field("glr_points", "glr-check needs at least one evaluation point"));
                }
            }
        }
        Ok(())
    }

    /// Observations for replication `index`.
    pub fn observations(&self, index: u64) -> Result<ObservationSet> {
        let seed = match self.redraw_observations {
            RedrawObservations::PerReplication => replication_seed(self.base_seed, index),
            RedrawObservations::Shared => self.base_seed,
        };
        simulate_for(self.model, self.theta_true, self.n_obs(), seed)
    }

    pub fn mle_config(&self, index: u64) -> Result<MleConfig> {
        let cfg = MleConfig {
            model: self.model,
            observations: self.observations(index)?,
            schedule: self.schedule,
            theta_box: self.box_domain()?,
            theta0: self.theta0.clone().ok_or_else(|| field("theta0", "missing"))?,
            d0: None,
            n_inner: self.n_inner(),
            iterations: self.iterations(),
            seed: replication_seed(self.base_seed, index),
            checkpoints: self.checkpoints.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pde_config(&self, index: u64) -> Result<PdeConfig> {
        let l0 = self.lambda0.ok_or_else(|| field("lambda0", "missing"))?;
        let cfg = PdeConfig {
            model: self.model,
            observations: self.observations(index)?,
            schedule: self.schedule,
            lambda_box: self.box_domain()?,
            lambda0: GaussianVariational::new(l0[0], l0[1]),
            n_inner: self.n_inner(),
            n_outer: self.n_outer.unwrap_or(0).max(0) as usize,
            iterations: self.iterations(),
            seed: replication_seed(self.base_seed, index),
            checkpoints: self.checkpoints.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
experiment = "mle"
variant = "both"
model = "linear-latent"
theta0 = [0.8]
theta_true = 1.0
n_obs = 100
n_inner = 10
iterations = 100
replications = 2

[schedule]
kind = "poly-log"
alpha0 = 20.0
a = 0.6666666666666666
beta0 = 0.1
b = 1.0

[domain]
lower = [0.5]
upper = [2.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = parse_config(BASE).unwrap();
        assert_eq!(cfg.replications(), 2);
        assert_eq!(cfg.checkpoints, CheckpointSpec::default());
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn theta0_outside_domain_is_named() {
        let text = BASE.replace("theta0 = [0.8]", "theta0 = [3.0]");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("theta0"), "{err}");
    }

    #[test]
    fn negative_n_is_rejected() {
        let err = parse_config(&BASE.replace("n_inner = 10", "n_inner = -5")).unwrap_err().to_string();
        assert!(err.contains("n_inner"), "{err}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_report_location() {
        let err = parse_config(&format!("{BASE}\nbogus = 1\n")).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
        let err = parse_config("name = \n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn shared_observations_ignore_the_replication() {
        let mut cfg = parse_config(BASE).unwrap();
        assert_ne!(cfg.observations(0).unwrap(), cfg.observations(1).unwrap());
        cfg.redraw_observations = RedrawObservations::Shared;
        assert_eq!(cfg.observations(0).unwrap(), cfg.observations(1).unwrap());
    }
}
