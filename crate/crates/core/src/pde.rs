//! Posterior density estimation with a Gaussian variational family.
//!
//! The outer layer freezes `M` standard normal draws `u_m` and reparameterizes
//! `θ_m = μ + σ u_m`. Each block `m` runs its own fast trackers `D_{m,t}` for
//! the scores `∇_θ log p(Y_t | θ_m)`, and the slow iterate `λ = (μ, σ)` moves
//! along
//!
//! ```text
//! S = (1/M) Σ_m ∇_λθ(u_m; λ) (Σ_t D_{m,t} + ∇log p(θ_m) − ∇_θ log q_λ(θ_m))
//! ```
//!
//! assembled from per-block sums; the stacked matrices `E^M`, `A(λ)` are
//! never formed outside of [`assemble_slow_drift_dense`].

use crate::error::{Error, Result};
use crate::glr::{BatchEstimate, BatchEstimator};
use crate::mle::ratio_scores;
use crate::models::{
    conjugate_posterior, prior_logpdf_grad, AnalyticOracle, LinearLatentModel, LocationModel, ModelId,
    ObservationSet, StochasticModel,
};
use crate::record::{CheckpointSpec, PdeRow, RunFailure, RunRecord, Variant};
use crate::rng::{std_normal, stream, SimRng, Stream};
use crate::sa::{check_finite, two_timescale_step, BoxDomain, ProjectionResult, StepSchedule};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `q_λ = N(μ, σ²)`, parameterized by the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianVariational {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianVariational {
    pub fn new(mu: f64, sigma: f64) -> Self {
        GaussianVariational { mu, sigma }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.mu, self.sigma]
    }

    fn from_slice(v: &[f64]) -> Self {
        GaussianVariational { mu: v[0], sigma: v[1] }
    }
}

/// Outer-layer draws, fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSamples {
    u: Vec<f64>,
    seed: u64,
}

impl OuterSamples {
    /// `M` standard normal draws from the outer stream of `seed`.
    pub fn draw(n_outer: usize, seed: u64) -> Result<Self> {
        if n_outer == 0 {
            return Err(Error::Contract("M must be at least 1".into()));
        }
        let mut rng = stream(seed, Stream::Outer);
        Ok(OuterSamples { u: (0..n_outer).map(|_| std_normal(&mut rng)).collect(), seed })
    }

    pub fn from_values(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("outer samples must be finite and non-empty".into()));
        }
        Ok(OuterSamples { u, seed: 0 })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The first `m` draws (outer sets are nested across `M`).
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.u.len() {
            return Err(Error::Contract(format!("prefix length {m} outside 1..={}", self.u.len())));
        }
        Ok(OuterSamples { u: self.u[..m].to_vec(), seed: self.seed })
    }
}

/// `θ(u; λ) = μ + σu` and its Jacobian `∇_λθ = (1, u)`.
pub fn reparam(u: f64, lambda: GaussianVariational) -> (f64, [f64; 2]) {
    (lambda.mu + lambda.sigma * u, [1.0, u])
}

/// `∇_θ log q_λ(θ) = −(θ − μ)/σ²`.
pub fn variational_score(theta: f64, lambda: GaussianVariational) -> f64 {
    -(theta - lambda.mu) / (lambda.sigma * lambda.sigma)
}

/// Per-block pieces of the slow drift and their assembled average `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowDriftTerms {
    /// `A_m = ∇_λθ(u_m; λ)` (2 × 1 each).
    pub jacobians: Vec<[f64; 2]>,
    /// `B_m = ∇_θ log p(θ_m)`.
    pub prior_scores: Vec<f64>,
    /// `C_m = ∇_θ log q_λ(θ_m)`.
    pub variational_scores: Vec<f64>,
    pub s: [f64; 2],
}

/// Assembles `S` from per-block likelihood-score sums `Σ_t D_{m,t}`.
pub fn assemble_slow_drift(lambda: GaussianVariational, outer: &[f64], score_sums: &[f64]) -> Result<SlowDriftTerms> {
    if outer.len() != score_sums.len() {
        return Err(Error::Contract("one score sum per outer sample is required".into()));
    }
    let m = outer.len() as f64;
    let mut terms = SlowDriftTerms {
        jacobians: Vec::with_capacity(outer.len()),
        prior_scores: Vec::with_capacity(outer.len()),
        variational_scores: Vec::with_capacity(outer.len()),
        s: [0.0; 2],
    };
    for (&u, &ed) in outer.iter().zip(score_sums) {
        let (theta, jac) = reparam(u, lambda);
        let b = prior_logpdf_grad(theta);
        let c = variational_score(theta, lambda);
        let inner = ed + b - c;
        terms.s[0] += jac[0] * inner;
        terms.s[1] += jac[1] * inner;
        terms.jacobians.push(jac);
        terms.prior_scores.push(b);
        terms.variational_scores.push(c);
    }
    terms.s[0] /= m;
    terms.s[1] /= m;
    Ok(terms)
}

/// Reference assembly with explicit `A(λ)` (`2 × M`), `E^M = I_M ⊗ 1_Tᵀ`
/// (`M × MT`), `B` and `C`: `S = A/M · (E^M D + B − C)`. `d_blocks` is the
/// stacked `M·T` tracker vector.
pub fn assemble_slow_drift_dense(lambda: GaussianVariational, outer: &[f64], d_blocks: &[f64], n_obs: usize) -> [f64; 2] {
    let m = outer.len();
    let mt = m * n_obs;
    let mut e_m = vec![vec![0.0; mt]; m];
    for (i, row) in e_m.iter_mut().enumerate() {
        for t in 0..n_obs {
            row[i * n_obs + t] = 1.0;
        }
    }
    let mut a = [vec![0.0; m], vec![0.0; m]];
    let mut b = vec![0.0; m];
    let mut c = vec![0.0; m];
    for (i, &u) in outer.iter().enumerate() {
        let (theta, jac) = reparam(u, lambda);
        a[0][i] = jac[0];
        a[1][i] = jac[1];
        b[i] = prior_logpdf_grad(theta);
        c[i] = variational_score(theta, lambda);
    }
    let inner: Vec<f64> = (0..m)
        .map(|i| (0..mt).map(|j| e_m[i][j] * d_blocks[j]).sum::<f64>() + b[i] - c[i])
        .collect();
    let mut s = [0.0; 2];
    for r in 0..2 {
        s[r] = (0..m).map(|i| a[r][i] * inner[i]).sum::<f64>() / m as f64;
    }
    s
}

/// Inputs of one PDE run.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    pub model: ModelId,
    pub observations: ObservationSet,
    pub schedule: StepSchedule,
    pub lambda_box: BoxDomain,
    pub lambda0: GaussianVariational,
    pub n_inner: usize,
    pub n_outer: usize,
    pub iterations: u64,
    /// Seed of the inner and outer streams.
    pub seed: u64,
    pub checkpoints: CheckpointSpec,
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.checkpoints.validate()?;
        if self.observations.is_empty() {
            return Err(Error::Config("observations: T must be at least 1".into()));
        }
        if self.n_inner == 0 {
            return Err(Error::Config("n_inner: N must be at least 1".into()));
        }
        if self.n_outer == 0 {
            return Err(Error::Config("n_outer: M must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations: K must be at least 1".into()));
        }
        if self.lambda_box.dim() != 2 {
            return Err(Error::Config("lambda box must be two-dimensional (mu, sigma)".into()));
        }
        if self.lambda_box.lower()[1] <= 0.0 {
            return Err(Error::Config("lambda box must keep sigma strictly positive".into()));
        }
        if !self.lambda_box.contains(&self.lambda0.to_vec()) {
            return Err(Error::Config(format!("lambda0 {:?} is not inside the feasible box", self.lambda0)));
        }
        Ok(())
    }

    pub fn key(&self) -> String {
        format!(
            "pde|{}|T={}|theta_true={}|{:?}|{:?}|lambda0={:?}|N={}|M={}|K={}|{:?}",
            self.model.name(),
            self.observations.len(),
            self.observations.theta_true,
            self.schedule,
            self.lambda_box,
            self.lambda0,
            self.n_inner,
            self.n_outer,
            self.iterations,
            self.checkpoints
        )
    }
}

/// Slow iterate λ and the stacked `M × T` trackers.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    pub lambda: GaussianVariational,
    pub d_blocks: Vec<f64>,
    pub k: u64,
}

fn block_sums(d_blocks: &[f64], n_obs: usize) -> Vec<f64> {
    d_blocks.chunks_exact(n_obs).map(|b| b.iter().sum()).collect()
}

/// One NMTS update from per-block batch estimates (one per outer sample).
pub fn nmts_pde_update(
    state: &mut PdeState,
    outer: &OuterSamples,
    estimates: &[BatchEstimate],
    schedule: &StepSchedule,
    lambda_box: &BoxDomain,
) -> Result<(SlowDriftTerms, ProjectionResult)> {
    if estimates.len() != outer.len() {
        return Err(Error::Contract("one batch estimate per outer sample is required".into()));
    }
    let n_obs = estimates[0].n_obs();
    if state.d_blocks.len() != outer.len() * n_obs {
        return Err(Error::Contract("tracker blocks do not match M × T".into()));
    }
    let k = state.k + 1;
    let terms = assemble_slow_drift(state.lambda, outer.u(), &block_sums(&state.d_blocks, n_obs))?;
    let mut fast_drift = vec![0.0; state.d_blocks.len()];
    for (m, est) in estimates.iter().enumerate() {
        for t in 0..n_obs {
            let i = m * n_obs + t;
            fast_drift[i] = est.g1_mean[t] - est.g2_mean[t] * state.d_blocks[i];
        }
    }
    let out = two_timescale_step(
        &state.d_blocks,
        &state.lambda.to_vec(),
        &fast_drift,
        &terms.s,
        k,
        schedule,
        lambda_box,
    )?;
    state.d_blocks = out.fast;
    state.lambda = GaussianVariational::from_slice(&out.slow);
    state.k = k;
    Ok((terms, out.projection))
}

/// One STS update: per-block ratio scores replace the trackers. The ratios
/// are stored in `state.d_blocks` for diagnostics.
pub fn sts_pde_update(
    state: &mut PdeState,
    outer: &OuterSamples,
    estimates: &[BatchEstimate],
    schedule: &StepSchedule,
    lambda_box: &BoxDomain,
) -> Result<(SlowDriftTerms, ProjectionResult)> {
    if estimates.len() != outer.len() {
        return Err(Error::Contract("one batch estimate per outer sample is required".into()));
    }
    let n_obs = estimates[0].n_obs();
    let k = state.k + 1;
    let mut ratios = Vec::with_capacity(outer.len() * n_obs);
    for est in estimates {
        ratios.extend(ratio_scores(est, k)?);
    }
    let terms = assemble_slow_drift(state.lambda, outer.u(), &block_sums(&ratios, n_obs))?;
    check_finite(k, "slow drift", &terms.s)?;
    let beta = schedule.beta_at(k)?;
    let mut lambda = vec![state.lambda.mu + beta * terms.s[0], state.lambda.sigma + beta * terms.s[1]];
    let correction = lambda_box.project_in_place(&mut lambda);
    state.lambda = GaussianVariational::from_slice(&lambda);
    state.d_blocks = ratios;
    state.k = k;
    Ok((terms, ProjectionResult { point: lambda, correction }))
}

/// Stateful PDE stepper: owns the frozen outer samples and the inner stream.
pub struct PdeDriver<'a, M> {
    model: &'a M,
    config: &'a PdeConfig,
    outer: OuterSamples,
    estimator: BatchEstimator,
    batches: Vec<BatchEstimate>,
    rng: SimRng,
    eval_lambda: GaussianVariational,
}

impl<'a, M: StochasticModel> PdeDriver<'a, M> {
    pub fn new(model: &'a M, config: &'a PdeConfig) -> Result<Self> {
        let outer = OuterSamples::draw(config.n_outer, config.seed)?;
        Self::with_outer(model, config, outer)
    }

    pub fn with_outer(model: &'a M, config: &'a PdeConfig, outer: OuterSamples) -> Result<Self> {
        config.validate()?;
        if model.param_dim() != 1 {
            return Err(Error::Config("the Gaussian variational family needs a scalar parameter".into()));
        }
        if outer.len() != config.n_outer {
            return Err(Error::Config("outer sample count differs from n_outer".into()));
        }
        let t = config.observations.len();
        Ok(PdeDriver {
            model,
            config,
            estimator: BatchEstimator::new(model, &config.observations.values)?,
            batches: vec![BatchEstimate::zeros(t, 1); outer.len()],
            outer,
            rng: stream(config.seed, Stream::Inner),
            eval_lambda: config.lambda0,
        })
    }

    pub fn outer(&self) -> &OuterSamples {
        &self.outer
    }

    pub fn initial_state(&self) -> PdeState {
        PdeState {
            lambda: self.config.lambda0,
            d_blocks: vec![0.0; self.outer.len() * self.config.observations.len()],
            k: 0,
        }
    }

    fn draw(&mut self, lambda: GaussianVariational, k: u64) -> Result<()> {
        self.eval_lambda = lambda;
        for (m, &u) in self.outer.u.iter().enumerate() {
            let (theta, _) = reparam(u, lambda);
            self.estimator
                .estimate_into(self.model, &mut self.rng, self.config.n_inner, &[theta], &mut self.batches[m])
                .map_err(|e| match e {
                    Error::Singularity(msg) => Error::Singularity(format!("iteration {k}, block {m}: {msg}")),
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Fresh inner batches for every block at the current λ, then one update.
    pub fn step(&mut self, state: &mut PdeState, variant: Variant) -> Result<(SlowDriftTerms, ProjectionResult)> {
        self.draw(state.lambda, state.k + 1)?;
        match variant {
            Variant::Nmts => nmts_pde_update(state, &self.outer, &self.batches, &self.config.schedule, &self.config.lambda_box),
            Variant::Sts => sts_pde_update(state, &self.outer, &self.batches, &self.config.schedule, &self.config.lambda_box),
        }
    }

    /// λ at which the last batches were drawn.
    pub fn eval_lambda(&self) -> GaussianVariational {
        self.eval_lambda
    }
}

fn outer_thetas(outer: &[f64], lambda: GaussianVariational) -> impl Iterator<Item = (f64, f64)> + '_ {
    outer.iter().map(move |&u| (u, lambda.mu + lambda.sigma * u))
}

fn likelihood_score_sum<M: AnalyticOracle + ?Sized>(model: &M, observations: &[f64], theta: f64) -> f64 {
    let mut s = [0.0];
    observations
        .iter()
        .map(|&y| {
            model.score(y, &[theta], &mut s);
            s[0]
        })
        .sum()
}

/// SAA surrogate `L̂_M(λ) = (1/M) Σ_m [log p(y|θ_m) + log p(θ_m) − log q_λ(θ_m)]`
/// with analytic likelihoods.
pub fn surrogate_elbo<M: AnalyticOracle + ?Sized>(
    model: &M,
    lambda: GaussianVariational,
    outer: &OuterSamples,
    observations: &[f64],
) -> f64 {
    let total: f64 = outer_thetas(outer.u(), lambda)
        .map(|(u, theta)| {
            let loglik: f64 = observations.iter().map(|&y| model.log_density(y, &[theta])).sum();
            let log_prior = -0.5 * LN_2PI - 0.5 * theta * theta;
            let log_q = -lambda.sigma.ln() - 0.5 * LN_2PI - 0.5 * u * u;
            loglik + log_prior - log_q
        })
        .sum();
    total / outer.len() as f64
}

/// Exact gradient of [`surrogate_elbo`] in `λ`, using analytic likelihood scores.
///
/// Unlike [`path_grad_saa`] this keeps the direct `−∂_λ log q_λ(θ)` term,
/// which contributes `(0, 1/σ)` under frozen `u_m`.
pub fn elbo_grad_saa<M: AnalyticOracle + ?Sized>(
    model: &M,
    lambda: GaussianVariational,
    outer: &OuterSamples,
    observations: &[f64],
) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (u, theta) in outer_thetas(outer.u(), lambda) {
        let inner = likelihood_score_sum(model, observations, theta) + prior_logpdf_grad(theta);
        g[0] += inner;
        g[1] += u * inner;
    }
    let m = outer.len() as f64;
    [g[0] / m, g[1] / m + 1.0 / lambda.sigma]
}

/// Average of the pathwise integrand `h(u_m; λ) = ∇_λθ (∇log p(y|θ) + ∇log p(θ) − ∇_θ log q_λ(θ))`
/// with analytic scores: the quantity the slow drift `S` estimates.
pub fn path_grad_saa<M: AnalyticOracle + ?Sized>(
    model: &M,
    lambda: GaussianVariational,
    outer: &OuterSamples,
    observations: &[f64],
) -> [f64; 2] {
    let sums: Vec<f64> = outer_thetas(outer.u(), lambda)
        .map(|(_, theta)| likelihood_score_sum(model, observations, theta))
        .collect();
    assemble_slow_drift(lambda, outer.u(), &sums).expect("lengths match").s
}

/// Maximizer `λ̄^M` of the surrogate over the box, by projected Newton
/// ascent on [`elbo_grad_saa`] (finite-difference Hessian, Armijo
/// backtracking). Stops once the projected gradient norm is below `tol`.
pub fn surrogate_optimum<M: AnalyticOracle + ?Sized>(
    model: &M,
    outer: &OuterSamples,
    observations: &[f64],
    lambda_box: &BoxDomain,
    start: GaussianVariational,
    tol: f64,
) -> Result<GaussianVariational> {
    const MAX_STEPS: usize = 10_000;
    if lambda_box.dim() != 2 || lambda_box.lower()[1] <= 0.0 {
        return Err(Error::Contract("lambda box must be 2-D with positive sigma bound".into()));
    }
    let lo = lambda_box.lower();
    let hi = lambda_box.upper();
    let objective = |l: &[f64; 2]| surrogate_elbo(model, GaussianVariational::new(l[0], l[1]), outer, observations);
    let grad = |l: &[f64; 2]| elbo_grad_saa(model, GaussianVariational::new(l[0], l[1]), outer, observations);
    let mut x = [start.mu.clamp(lo[0], hi[0]), start.sigma.clamp(lo[1], hi[1])];

    // coordinates pinned at a bound by an outward gradient are dropped
    let projected = |x: &[f64; 2], g: &[f64; 2]| {
        let free = [0, 1].map(|j| !((x[j] <= lo[j] && g[j] < 0.0) || (x[j] >= hi[j] && g[j] > 0.0)));
        (free, [0, 1].map(|j| if free[j] { g[j] } else { 0.0 }))
    };
    for _ in 0..MAX_STEPS {
        let g = grad(&x);
        let (free, pg) = projected(&x, &g);
        let pg_norm = pg[0].hypot(pg[1]);
        if pg_norm < tol {
            return Ok(GaussianVariational::new(x[0], x[1]));
        }
        let dir = newton_direction(&grad, &x, &pg, free, lo, hi);
        let newton = [0, 1].map(|j| (x[j] + dir[j]).clamp(lo[j], hi[j]));
        // near the optimum objective differences drown in rounding; judge the full step by the gradient
        let (_, pg_newton) = projected(&newton, &grad(&newton));
        if newton != x && pg_newton[0].hypot(pg_newton[1]) <= 0.5 * pg_norm {
            x = newton;
            continue;
        }
        let f0 = objective(&x);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [0, 1].map(|j| (x[j] + t * dir[j]).clamp(lo[j], hi[j]));
            if cand == x {
                break;
            }
            let ascent: f64 = (0..2).map(|j| g[j] * (cand[j] - x[j])).sum();
            if objective(&cand) >= f0 + 1e-4 * ascent {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        x = accepted.ok_or_else(|| {
            Error::NoConvergence(format!("line search stalled at λ = {x:?} with projected gradient {pg:?}"))
        })?;
    }
    Err(Error::NoConvergence(format!("surrogate ascent exceeded {MAX_STEPS} steps")))
}

fn newton_direction(
    grad: &impl Fn(&[f64; 2]) -> [f64; 2],
    x: &[f64; 2],
    pg: &[f64; 2],
    free: [bool; 2],
    lo: &[f64],
    hi: &[f64],
) -> [f64; 2] {
    let mut h = [[0.0; 2]; 2];
    for j in 0..2 {
        let step = 1e-5 * x[j].abs().max(1.0);
        let step = step.min((hi[j] - lo[j]) / 4.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += step;
        // one-sided in σ when a central difference would leave σ > 0
        if j == 0 || x[j] - step > 0.0 {
            xm[j] -= step;
        }
        let gp = grad(&xp);
        let gm = grad(&xm);
        let width = xp[j] - xm[j];
        h[0][j] = (gp[0] - gm[0]) / width;
        h[1][j] = (gp[1] - gm[1]) / width;
    }
    let sym = 0.5 * (h[0][1] + h[1][0]);
    h[0][1] = sym;
    h[1][0] = sym;
    match free {
        [true, true] => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            // negative definite: ascent direction -H⁻¹g
            if h[0][0] < 0.0 && det > 0.0 {
                return [
                    -(h[1][1] * pg[0] - h[0][1] * pg[1]) / det,
                    -(-h[1][0] * pg[0] + h[0][0] * pg[1]) / det,
                ];
            }
        }
        [true, false] if h[0][0] < 0.0 => return [-pg[0] / h[0][0], 0.0],
        [false, true] if h[1][1] < 0.0 => return [0.0, -pg[1] / h[1][1]],
        _ => {}
    }
    *pg
}

/// One point of [`surrogate_error_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub n_outer: usize,
    pub optimum: GaussianVariational,
    /// `‖(μ̄ − posterior mean, σ̄ − posterior sd)‖₂`
    pub error: f64,
}

/// Surrogate maximizers for nested outer sets of the given sizes (location
/// model, analytic scores) and their distance to the conjugate posterior.
pub fn surrogate_error_sweep(
    observations: &[f64],
    counts: &[usize],
    seed: u64,
    lambda_box: &BoxDomain,
    start: GaussianVariational,
) -> Result<Vec<SweepPoint>> {
    let (post_mean, post_var) = conjugate_posterior(observations)?;
    let largest = counts.iter().copied().max().ok_or_else(|| Error::Contract("no outer sample counts".into()))?;
    let all = OuterSamples::draw(largest, seed)?;
    counts
        .iter()
        .map(|&m| {
            let optimum = surrogate_optimum(&LocationModel, &all.prefix(m)?, observations, lambda_box, start, 1e-10)?;
            let error = (optimum.mu - post_mean).hypot(optimum.sigma - post_var.sqrt());
            Ok(SweepPoint { n_outer: m, optimum, error })
        })
        .collect()
}

fn posterior_reference(config: &PdeConfig) -> Result<(f64, f64)> {
    match config.model {
        ModelId::Location => conjugate_posterior(&config.observations.values),
        other => Err(Error::Config(format!(
            "no analytic posterior for model '{}'; PDE error metrics need the location model",
            other.name()
        ))),
    }
}

/// Runs `iterations` steps and records checkpoints against the analytic posterior.
pub fn run_pde_with<M: StochasticModel + AnalyticOracle>(
    model: &M,
    config: &PdeConfig,
    variant: Variant,
) -> Result<RunRecord<PdeRow>> {
    let (post_mean, post_var) = posterior_reference(config)?;
    let mut driver = PdeDriver::new(model, config)?;
    let obs = config.observations.values.clone();
    let n_obs = obs.len();
    let checkpoints = config.checkpoints.resolve(config.iterations);
    let mut next = checkpoints.iter().copied().peekable();
    let mut state = driver.initial_state();
    let mut record = RunRecord {
        variant,
        seed: config.seed,
        config_key: format!("{}|{}", config.key(), variant.name()),
        param_dim: 1,
        rows: Vec::with_capacity(checkpoints.len()),
        failure: None,
    };
    let mut score = [0.0];
    while state.k < config.iterations {
        if let Err(e) = driver.step(&mut state, variant) {
            record.failure = Some(RunFailure { k: state.k + 1, cause: e.to_string() });
            break;
        }
        if next.peek() != Some(&state.k) {
            continue;
        }
        next.next();
        // NMTS trackers refer to λ_k; STS ratios to the λ they were drawn at.
        let at = match variant {
            Variant::Nmts => state.lambda,
            Variant::Sts => driver.eval_lambda(),
        };
        let s_k = assemble_slow_drift(at, driver.outer().u(), &block_sums(&state.d_blocks, n_obs))?.s;
        let target = path_grad_saa(model, at, driver.outer(), &obs);
        let mut block_residual: f64 = 0.0;
        for (m, &u) in driver.outer().u().iter().enumerate() {
            let theta = reparam(u, at).0;
            for (t, &y) in obs.iter().enumerate() {
                model.score(y, &[theta], &mut score);
                block_residual = block_residual.max((state.d_blocks[m * n_obs + t] - score[0]).abs());
            }
        }
        record.rows.push(PdeRow {
            k: state.k,
            mu: state.lambda.mu,
            sigma: state.lambda.sigma,
            mean_abs_err: (state.lambda.mu - post_mean).abs(),
            var_abs_err: (state.lambda.sigma * state.lambda.sigma - post_var).abs(),
            sk_residual: (s_k[0] - target[0]).hypot(s_k[1] - target[1]),
            max_block_residual: block_residual,
        });
    }
    Ok(record)
}

/// [`run_pde_with`] for a bundled model selected by `config.model`.
pub fn run_pde(config: &PdeConfig, variant: Variant) -> Result<RunRecord<PdeRow>> {
    match config.model {
        ModelId::Location => run_pde_with(&LocationModel, config, variant),
        ModelId::LinearLatent => run_pde_with(&LinearLatentModel, config, variant),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::simulate_observations;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reparam_values() {
        let (t, j) = reparam(0.0, GaussianVariational::new(0.7, 1.3));
        assert_eq!((t, j), (0.7, [1.0, 0.0]));
        let (t, j) = reparam(1.3, GaussianVariational::new(0.0, 1.0));
        assert_eq!((t, j), (1.3, [1.0, 1.3]));
    }

    #[test]
    fn variational_score_values() {
        assert_eq!(variational_score(0.4, GaussianVariational::new(0.4, 2.0)), 0.0);
        assert_eq!(variational_score(2.0, GaussianVariational::new(0.0, 1.0)), -2.0);
        assert_abs_diff_eq!(variational_score(0.0, GaussianVariational::new(1.0, 0.5)), 4.0);
    }

    #[test]
    fn block_sums_match_dense_assembly() {
        let outer = [0.3, -1.2, 0.8];
        let lambda = GaussianVariational::new(0.4, 0.7);
        let d: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = assemble_slow_drift(lambda, &outer, &block_sums(&d, 2)).unwrap().s;
        let dense = assemble_slow_drift_dense(lambda, &outer, &d, 2);
        assert!((s[0] - dense[0]).abs() < 1e-12 && (s[1] - dense[1]).abs() < 1e-12);
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let obs = simulate_observations(&LocationModel, 1.0, 10, 3).unwrap().values;
        let outer = OuterSamples::draw(10, 4).unwrap();
        let lambda = GaussianVariational::new(0.5, 0.8);
        let g = elbo_grad_saa(&LocationModel, lambda, &outer, &obs);
        let h = 1e-5;
        let f = |mu, s| surrogate_elbo(&LocationModel, GaussianVariational::new(mu, s), &outer, &obs);
        let fd = [(f(0.5 + h, 0.8) - f(0.5 - h, 0.8)) / (2.0 * h), (f(0.5, 0.8 + h) - f(0.5, 0.8 - h)) / (2.0 * h)];
        assert_abs_diff_eq!(g[0], fd[0], epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], fd[1], epsilon = 1e-6);
    }

    #[test]
    fn pathwise_gradient_vanishes_at_conjugate_posterior() {
        let obs = simulate_observations(&LocationModel, 1.0, 10, 3).unwrap().values;
        let (m, v) = conjugate_posterior(&obs).unwrap();
        let outer = OuterSamples::draw(7, 4).unwrap();
        let h = path_grad_saa(&LocationModel, GaussianVariational::new(m, v.sqrt()), &outer, &obs);
        assert!(h[0].abs() < 1e-12 && h[1].abs() < 1e-12);
    }

    #[test]
    fn surrogate_optimum_matches_closed_form() {
        // For the location model λ̄^M solves
        //   σ² = 1 / ((n+1)·var_M(u)),  μ = n ȳ/(n+1) − σ·mean_M(u)
        let obs = simulate_observations(&LocationModel, 1.0, 10, 8).unwrap().values;
        let n = obs.len() as f64;
        let ybar = obs.iter().sum::<f64>() / n;
        let outer = OuterSamples::draw(50, 9).unwrap();
        let u = outer.u();
        let m1 = u.iter().sum::<f64>() / u.len() as f64;
        let var = u.iter().map(|x| (x - m1) * (x - m1)).sum::<f64>() / u.len() as f64;
        let sigma = (1.0 / ((n + 1.0) * var)).sqrt();
        let mu = n * ybar / (n + 1.0) - sigma * m1;
        let bx = BoxDomain::new(vec![-1.0, 0.01], vec![10.0, 2.0]).unwrap();
        let opt = surrogate_optimum(&LocationModel, &outer, &obs, &bx, GaussianVariational::new(0.0, 1.0), 1e-10).unwrap();
        assert_abs_diff_eq!(opt.mu, mu, epsilon = 1e-9);
        assert_abs_diff_eq!(opt.sigma, sigma, epsilon = 1e-9);
        let g = elbo_grad_saa(&LocationModel, opt, &outer, &obs);
        assert!(g[0].hypot(g[1]) < 1e-10);
    }

    #[test]
    fn single_centered_outer_sample_pins_sigma_to_bound() {
        let obs = simulate_observations(&LocationModel, 1.0, 10, 8).unwrap().values;
        let n = obs.len() as f64;
        let outer = OuterSamples::from_values(vec![0.0]).unwrap();
        let bx = BoxDomain::new(vec![-1.0, 0.01], vec![10.0, 2.0]).unwrap();
        let opt = surrogate_optimum(&LocationModel, &outer, &obs, &bx, GaussianVariational::new(0.0, 1.0), 1e-10).unwrap();
        assert_abs_diff_eq!(opt.mu, n / (n + 1.0) * obs.iter().sum::<f64>() / n, epsilon = 1e-10);
        assert_eq!(opt.sigma, 2.0);
    }

    fn config(n_inner: usize, n_outer: usize, iterations: u64) -> PdeConfig {
        PdeConfig {
            model: ModelId::Location,
            observations: simulate_observations(&LocationModel, 1.0, 10, 2).unwrap(),
            schedule: StepSchedule::poly_log(10.0, 2.0 / 3.0, 1.0, 1.0).unwrap(),
            lambda_box: BoxDomain::new(vec![-1.0, 0.01], vec![10.0, 2.0]).unwrap(),
            lambda0: GaussianVariational::new(0.0, 1.0),
            n_inner,
            n_outer,
            iterations,
            seed: 31,
            checkpoints: CheckpointSpec::Every,
        }
    }

    #[test]
    fn single_step_run_matches_manual_step() {
        let cfg = config(100, 3, 1);
        for variant in [Variant::Nmts, Variant::Sts] {
            let rec = run_pde(&cfg, variant).unwrap();
            let mut driver = PdeDriver::new(&LocationModel, &cfg).unwrap();
            let mut state = driver.initial_state();
            driver.step(&mut state, variant).unwrap();
            assert_eq!(rec.rows[0].mu, state.lambda.mu);
            assert_eq!(rec.rows[0].sigma, state.lambda.sigma);
        }
    }

    #[test]
    fn runs_are_deterministic_and_feasible() {
        let cfg = config(50, 4, 500);
        for variant in [Variant::Nmts, Variant::Sts] {
            let a = run_pde(&cfg, variant).unwrap();
            assert_eq!(a, run_pde(&cfg, variant).unwrap());
            for r in &a.rows {
                assert!((-1.0..=10.0).contains(&r.mu) && (0.01..=2.0).contains(&r.sigma));
            }
        }
    }

    #[test]
    fn outer_samples_stay_frozen() {
        let cfg = config(20, 5, 50);
        let mut driver = PdeDriver::new(&LocationModel, &cfg).unwrap();
        let before = driver.outer().clone();
        let mut state = driver.initial_state();
        for _ in 0..50 {
            driver.step(&mut state, Variant::Nmts).unwrap();
        }
        assert_eq!(driver.outer(), &before);
    }

    #[test]
    fn exact_scores_give_pathwise_drift() {
        let cfg = config(10, 4, 1);
        let outer = OuterSamples::draw(4, 1).unwrap();
        let lambda = GaussianVariational::new(0.3, 0.9);
        let obs = &cfg.observations.values;
        let mut d_blocks = Vec::new();
        let mut score = [0.0];
        for &u in outer.u() {
            for &y in obs {
                LocationModel.score(y, &[reparam(u, lambda).0], &mut score);
                d_blocks.push(score[0]);
            }
        }
        let s = assemble_slow_drift(lambda, outer.u(), &block_sums(&d_blocks, obs.len())).unwrap().s;
        let h = path_grad_saa(&LocationModel, lambda, &outer, obs);
        assert!((s[0] - h[0]).abs() < 1e-12 && (s[1] - h[1]).abs() < 1e-12);
    }

    #[test]
    fn non_location_model_has_no_posterior_reference() {
        let mut cfg = config(10, 2, 5);
        cfg.model = ModelId::LinearLatent;
        assert!(matches!(run_pde(&cfg, Variant::Nmts), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn block_sums_match_dense_on_tiny_instances(
                m in 1usize..=3,
                t in 1usize..=2,
                mu in -3.0f64..3.0,
                sigma in 0.01f64..2.0,
                vals in proptest::collection::vec(-5.0f64..5.0, 9),
            ) {
                let lambda = GaussianVariational::new(mu, sigma);
                let outer = &vals[..m];
                let d = &vals[3..3 + m * t];
                let s = assemble_slow_drift(lambda, outer, &block_sums(d, t)).unwrap().s;
                let dense = assemble_slow_drift_dense(lambda, outer, d, t);
                prop_assert!((s[0] - dense[0]).abs() <= 1e-12 * dense[0].abs().max(1.0));
                prop_assert!((s[1] - dense[1]).abs() <= 1e-12 * dense[1].abs().max(1.0));
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn iterates_stay_in_box(seed in 0u64..1000, mu0 in -1.0f64..10.0, sigma0 in 0.01f64..2.0, sts in any::<bool>()) {
                let mut cfg = config(5, 3, 200);
                cfg.seed = seed;
                cfg.lambda0 = GaussianVariational::new(mu0, sigma0);
                cfg.checkpoints = CheckpointSpec::Every;
                let rec = run_pde(&cfg, if sts { Variant::Sts } else { Variant::Nmts }).unwrap();
                for row in &rec.rows {
                    prop_assert!(cfg.lambda_box.contains(&[row.mu, row.sigma]));
                    prop_assert!(row.sigma >= 0.01);
                }
            }
        }
    }
}
