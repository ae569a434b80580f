//! Maximum likelihood by nested multi-timescale stochastic approximation, with
//! the single-timescale ratio baseline.
//!
//! NMTS keeps one tracker `D[t]` per observation and updates
//!
//! ```text
//! D[t] <- D[t] + alpha_k (G1[t] - G2[t] D[t])
//! θ    <- Proj_Θ(θ + beta_k Σ_t D[t])
//! ```
//!
//! where the slow drift uses the trackers from before this step. At a fixed
//! θ the fast recursion's root is `D[t] = ∇p(Y_t)/p(Y_t)`, the per-observation
//! score, so no ratio of noisy estimates is ever formed. STS instead moves θ
//! along `Σ_t G1[t]/G2[t]`.

use crate::error::{Error, Result};
use crate::glr::{BatchEstimate, BatchEstimator};
use crate::models::{score_stack, AnalyticOracle, LinearLatentModel, LocationModel, ModelId, ObservationSet, StochasticModel};
use crate::record::{CheckpointSpec, MleRow, RunFailure, RunRecord, Variant};
use crate::rng::{stream, SimRng, Stream};
use crate::sa::{check_finite, two_timescale_step, BoxDomain, ProjectionResult, StepSchedule};

/// Inputs of one MLE run.
#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub model: ModelId,
    pub observations: ObservationSet,
    pub schedule: StepSchedule,
    pub theta_box: BoxDomain,
    pub theta0: Vec<f64>,
    /// Initial trackers, row-major `T × d`; zeros when `None`.
    pub d0: Option<Vec<f64>>,
    pub n_inner: usize,
    pub iterations: u64,
    /// Seed of the inner sampling stream.
    pub seed: u64,
    pub checkpoints: CheckpointSpec,
}

impl MleConfig {
    pub fn param_dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.checkpoints.validate()?;
        if self.observations.is_empty() {
            return Err(Error::Config("observations: T must be at least 1".into()));
        }
        if self.n_inner == 0 {
            return Err(Error::Config("n_inner: N must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations: K must be at least 1".into()));
        }
        if self.theta_box.dim() != self.theta0.len() || !self.theta_box.contains(&self.theta0) {
            return Err(Error::Config(format!("theta0 {:?} is not inside the feasible box", self.theta0)));
        }
        if let Some(d0) = &self.d0 {
            if d0.len() != self.observations.len() * self.param_dim() {
                return Err(Error::Config("d0 must have T × d entries".into()));
            }
            check_finite(0, "d0", d0)?;
        }
        Ok(())
    }

    /// Everything but the seed and the drawn observation values.
    pub fn key(&self) -> String {
        format!(
            "mle|{}|T={}|theta_true={}|{:?}|{:?}|theta0={:?}|N={}|K={}|{:?}",
            self.model.name(),
            self.observations.len(),
            self.observations.theta_true,
            self.schedule,
            self.theta_box,
            self.theta0,
            self.n_inner,
            self.iterations,
            self.checkpoints
        )
    }
}

/// Slow iterate θ, stacked trackers `D` (`T × d`), and the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MleState {
    pub theta: Vec<f64>,
    pub d_tracker: Vec<f64>,
    pub k: u64,
}

/// `Σ_t D[t]`, the block-sum form of `E D` with `E = [I_d, …, I_d]`.
pub fn tracker_sum(d_tracker: &[f64], param_dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; param_dim];
    for block in d_tracker.chunks_exact(param_dim) {
        for (a, b) in s.iter_mut().zip(block) {
            *a += b;
        }
    }
    s
}

/// One NMTS update given a batch estimate (the estimate may be injected).
pub fn nmts_mle_update(
    state: &mut MleState,
    est: &BatchEstimate,
    schedule: &StepSchedule,
    theta_box: &BoxDomain,
) -> Result<ProjectionResult> {
    let d = state.theta.len();
    if est.n_obs() * d != state.d_tracker.len() || est.param_dim != d {
        return Err(Error::Contract("batch estimate does not match tracker shape".into()));
    }
    let k = state.k + 1;
    let slow_drift = tracker_sum(&state.d_tracker, d);
    let fast_drift: Vec<f64> = state
        .d_tracker
        .iter()
        .zip(&est.g1_mean)
        .enumerate()
        .map(|(i, (dv, g1))| g1 - est.g2_mean[i / d] * dv)
        .collect();
    let out = two_timescale_step(&state.d_tracker, &state.theta, &fast_drift, &slow_drift, k, schedule, theta_box)?;
    state.d_tracker = out.fast;
    state.theta = out.slow;
    state.k = k;
    Ok(out.projection)
}

/// Plug-in score estimate `G1[t] / G2[t]` for every observation.
///
/// A zero/zero pair (no draw inside the indicator) contributes zero; any
/// other non-finite ratio is an error. Signed denominators are kept.
pub fn ratio_scores(est: &BatchEstimate, k: u64) -> Result<Vec<f64>> {
    let d = est.param_dim;
    let mut out = vec![0.0; est.g1_mean.len()];
    for t in 0..est.n_obs() {
        let g2 = est.g2_mean[t];
        let g1 = est.g1(t);
        if g2 == 0.0 && g1.iter().all(|v| *v == 0.0) {
            continue;
        }
        for j in 0..d {
            let r = g1[j] / g2;
            if !r.is_finite() {
                return Err(Error::NonFinite { k, detail: format!("ratio G1/G2 = {}/{} at observation {t}", g1[j], g2) });
            }
            out[t * d + j] = r;
        }
    }
    Ok(out)
}

/// One STS update. `state.d_tracker` receives the ratio estimates so that
/// the same residual diagnostics apply.
pub fn sts_mle_update(
    state: &mut MleState,
    est: &BatchEstimate,
    schedule: &StepSchedule,
    theta_box: &BoxDomain,
) -> Result<ProjectionResult> {
    let d = state.theta.len();
    let k = state.k + 1;
    let ratios = ratio_scores(est, k)?;
    let drift = tracker_sum(&ratios, d);
    check_finite(k, "slow drift", &drift)?;
    let beta = schedule.beta_at(k)?;
    let mut theta: Vec<f64> = state.theta.iter().zip(&drift).map(|(t, g)| t + beta * g).collect();
    let correction = theta_box.project_in_place(&mut theta);
    state.theta = theta.clone();
    state.d_tracker = ratios;
    state.k = k;
    Ok(ProjectionResult { point: theta, correction })
}

/// Stateful stepper that owns the inner stream and batch buffers.
pub struct MleDriver<'a, M> {
    model: &'a M,
    config: &'a MleConfig,
    estimator: BatchEstimator,
    batch: BatchEstimate,
    rng: SimRng,
    /// θ at which the most recent batch was drawn.
    eval_theta: Vec<f64>,
}

impl<'a, M: StochasticModel> MleDriver<'a, M> {
    pub fn new(model: &'a M, config: &'a MleConfig) -> Result<Self> {
        config.validate()?;
        if model.param_dim() != config.param_dim() {
            return Err(Error::Config(format!(
                "model has d = {} but theta0 has length {}",
                model.param_dim(),
                config.param_dim()
            )));
        }
        Ok(MleDriver {
            model,
            config,
            estimator: BatchEstimator::new(model, &config.observations.values)?,
            batch: BatchEstimate::zeros(config.observations.len(), config.param_dim()),
            rng: stream(config.seed, Stream::Inner),
            eval_theta: config.theta0.clone(),
        })
    }

    pub fn initial_state(&self) -> MleState {
        let d = self.config.param_dim();
        MleState {
            theta: self.config.theta0.clone(),
            d_tracker: self.config.d0.clone().unwrap_or_else(|| vec![0.0; self.config.observations.len() * d]),
            k: 0,
        }
    }

    fn draw(&mut self, theta: &[f64]) -> Result<()> {
        self.eval_theta.clear();
        self.eval_theta.extend_from_slice(theta);
        self.estimator.estimate_into(self.model, &mut self.rng, self.config.n_inner, theta, &mut self.batch)
    }

    /// Draws a fresh batch at the current θ and applies the NMTS update.
    pub fn nmts_step(&mut self, state: &mut MleState) -> Result<ProjectionResult> {
        self.draw(&state.theta.clone()).map_err(|e| with_iteration(e, state.k + 1))?;
        nmts_mle_update(state, &self.batch, &self.config.schedule, &self.config.theta_box)
    }

    /// Draws a fresh batch at the current θ and applies the STS update.
    pub fn sts_step(&mut self, state: &mut MleState) -> Result<ProjectionResult> {
        self.draw(&state.theta.clone()).map_err(|e| with_iteration(e, state.k + 1))?;
        sts_mle_update(state, &self.batch, &self.config.schedule, &self.config.theta_box)
    }

    pub fn step(&mut self, state: &mut MleState, variant: Variant) -> Result<ProjectionResult> {
        match variant {
            Variant::Nmts => self.nmts_step(state),
            Variant::Sts => self.sts_step(state),
        }
    }

    /// θ where the last batch was drawn (the STS ratios refer to it).
    pub fn eval_theta(&self) -> &[f64] {
        &self.eval_theta
    }
}

fn with_iteration(e: Error, k: u64) -> Error {
    match e {
        Error::Singularity(m) => Error::Singularity(format!("at iteration {k}: {m}")),
        other => other,
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs `iterations` steps and records checkpoints.
///
/// Errors only when the configuration is invalid or the reference MLE does
/// not exist; an abort during iteration is stored in `failure`.
pub fn run_mle_with<M: StochasticModel + AnalyticOracle>(
    model: &M,
    config: &MleConfig,
    variant: Variant,
) -> Result<RunRecord<MleRow>> {
    let mut driver = MleDriver::new(model, config)?;
    let reference = model.mle(&config.observations.values)?;
    let obs = &config.observations.values;
    let checkpoints = config.checkpoints.resolve(config.iterations);
    let mut next = checkpoints.iter().copied().peekable();
    let mut state = driver.initial_state();
    let mut record = RunRecord {
        variant,
        seed: config.seed,
        config_key: format!("{}|{}", config.key(), variant.name()),
        param_dim: config.param_dim(),
        rows: Vec::with_capacity(checkpoints.len()),
        failure: None,
    };
    while state.k < config.iterations {
        let proj = match driver.step(&mut state, variant) {
            Ok(p) => p,
            Err(e) => {
                record.failure = Some(RunFailure { k: state.k + 1, cause: e.to_string() });
                break;
            }
        };
        if next.peek() == Some(&state.k) {
            next.next();
            let score_at = match variant {
                Variant::Nmts => state.theta.clone(),
                Variant::Sts => driver.eval_theta().to_vec(),
            };
            let score = score_stack(model, obs, &score_at);
            record.rows.push(MleRow {
                k: state.k,
                theta: state.theta.clone(),
                abs_err: euclid(&state.theta, &reference),
                tracking_residual: sup_distance(&state.d_tracker, &score),
                proj_active: proj.is_active(),
            });
        }
    }
    Ok(record)
}

/// [`run_mle_with`] for a bundled model selected by `config.model`.
pub fn run_mle(config: &MleConfig, variant: Variant) -> Result<RunRecord<MleRow>> {
    match config.model {
        ModelId::LinearLatent => run_mle_with(&LinearLatentModel, config, variant),
        ModelId::Location => run_mle_with(&LocationModel, config, variant),
    }
}

/// Runs only the fast recursion at a frozen θ (`beta ≡ 0`) and returns the
/// sup-norm distance of the trackers from the analytic score stack at each
/// checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn frozen_tracking<M: StochasticModel + AnalyticOracle>(
    model: &M,
    observations: &[f64],
    theta: &[f64],
    schedule: &StepSchedule,
    n_inner: usize,
    iterations: u64,
    seed: u64,
    checkpoints: &CheckpointSpec,
) -> Result<Vec<(u64, f64)>> {
    let d = theta.len();
    let mut estimator = BatchEstimator::new(model, observations)?;
    let mut batch = BatchEstimate::zeros(observations.len(), d);
    let mut rng = stream(seed, Stream::Inner);
    let score = score_stack(model, observations, theta);
    let mut tracker = vec![0.0; observations.len() * d];
    let ks = checkpoints.resolve(iterations);
    let mut next = ks.iter().copied().peekable();
    let mut out = Vec::with_capacity(ks.len());
    for k in 1..=iterations {
        estimator.estimate_into(model, &mut rng, n_inner, theta, &mut batch)?;
        let alpha = schedule.alpha_at(k)?;
        for (i, dv) in tracker.iter_mut().enumerate() {
            *dv += alpha * (batch.g1_mean[i] - batch.g2_mean[i / d] * *dv);
        }
        if next.peek() == Some(&k) {
            next.next();
            check_finite(k, "tracker", &tracker)?;
            out.push((k, sup_distance(&tracker, &score)));
        }
    }
    Ok(out)
}
