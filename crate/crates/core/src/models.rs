//! Bundled simulators with their GLR partials and analytic oracles.
//!
//! Both models have a scalar parameter (`d = 1`) and standard normal latents,
//! so their densities are available in closed form. The estimators never use
//! those closed forms; they exist to check the estimators.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glr::{generic_weights, G1Reading, ModelDerivatives};
use crate::rng::{std_normal, stream, SimRng, Stream};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A simulator `Y = g(X; θ)` whose latent draws can be generated.
pub trait StochasticModel: ModelDerivatives + Sync {
    /// Draws `X ~ f(·; θ)` into `x`.
    fn sample_latent(&self, theta: &[f64], rng: &mut SimRng, x: &mut [f64]);

    /// Indicator-free GLR weights: returns ψ and writes the G₁ weight.
    ///
    /// Defaults to the generic evaluator; models may override with a
    /// hand-reduced closed form.
    fn glr_weights(&self, x: &[f64], theta: &[f64], g1: &mut [f64]) -> Result<f64> {
        generic_weights(self, x, theta, G1Reading::DgDtheta, g1)
    }

    /// One simulated output.
    fn simulate(&self, theta: &[f64], rng: &mut SimRng) -> f64 {
        let mut x = vec![0.0; self.latent_dim()];
        self.sample_latent(theta, rng, &mut x);
        self.g(&x, theta)
    }
}

/// Closed-form likelihood quantities.
pub trait AnalyticOracle {
    fn density(&self, y: f64, theta: &[f64]) -> f64;
    fn log_density(&self, y: f64, theta: &[f64]) -> f64;
    /// `∇_θ p(y; θ)`.
    fn density_grad(&self, y: f64, theta: &[f64], out: &mut [f64]);
    /// `∇_θ log p(y; θ)`.
    fn score(&self, y: f64, theta: &[f64], out: &mut [f64]);
    /// Closed-form maximizer of the log-likelihood of `observations`.
    fn mle(&self, observations: &[f64]) -> Result<Vec<f64>>;
}

fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `Y = X₁ + θ X₂` with independent standard normal latents, so `Y ~ N(0, 1 + θ²)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinearLatentModel;

impl ModelDerivatives for LinearLatentModel {
    fn param_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        2
    }
    fn g(&self, x: &[f64], theta: &[f64]) -> f64 {
        x[0] + theta[0] * x[1]
    }
    fn dg_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        1.0
    }
    fn d2g_dx1x1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        0.0
    }
    fn dg_dtheta(&self, x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = x[1];
    }
    fn d2g_dtheta_dx1(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn dlogf_dx1(&self, x: &[f64], _theta: &[f64]) -> f64 {
        -x[0]
    }
    fn dlogf_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn dpsi_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        -1.0
    }
    fn dpsi_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

impl StochasticModel for LinearLatentModel {
    fn sample_latent(&self, _theta: &[f64], rng: &mut SimRng, x: &mut [f64]) {
        x[0] = std_normal(rng);
        x[1] = std_normal(rng);
    }

    // ψ = −x₁, G₁ weight = x₂ (1 − x₁²)
    #[inline]
    fn glr_weights(&self, x: &[f64], _theta: &[f64], g1: &mut [f64]) -> Result<f64> {
        g1[0] = x[1] * (1.0 - x[0] * x[0]);
        Ok(-x[0])
    }
}

impl AnalyticOracle for LinearLatentModel {
    fn density(&self, y: f64, theta: &[f64]) -> f64 {
        let s = (1.0 + theta[0] * theta[0]).sqrt();
        std_normal_pdf(y / s) / s
    }
    fn log_density(&self, y: f64, theta: &[f64]) -> f64 {
        let v = 1.0 + theta[0] * theta[0];
        -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * y * y / v
    }
    fn density_grad(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        self.score(y, theta, out);
        out[0] *= self.density(y, theta);
    }
    fn score(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        let t = theta[0];
        let v = 1.0 + t * t;
        out[0] = -t / v + y * y * t / (v * v);
    }
    fn mle(&self, observations: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![analytic_mle(observations)?])
    }
}

/// `Y = X + θ` with `X ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocationModel;

impl ModelDerivatives for LocationModel {
    fn param_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn g(&self, x: &[f64], theta: &[f64]) -> f64 {
        x[0] + theta[0]
    }
    fn dg_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        1.0
    }
    fn d2g_dx1x1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        0.0
    }
    fn dg_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn d2g_dtheta_dx1(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn dlogf_dx1(&self, x: &[f64], _theta: &[f64]) -> f64 {
        -x[0]
    }
    fn dlogf_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn dpsi_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        -1.0
    }
    fn dpsi_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

impl StochasticModel for LocationModel {
    fn sample_latent(&self, _theta: &[f64], rng: &mut SimRng, x: &mut [f64]) {
        x[0] = std_normal(rng);
    }

    // ψ = −x, G₁ weight = 1 − x²
    #[inline]
    fn glr_weights(&self, x: &[f64], _theta: &[f64], g1: &mut [f64]) -> Result<f64> {
        g1[0] = 1.0 - x[0] * x[0];
        Ok(-x[0])
    }
}

impl AnalyticOracle for LocationModel {
    fn density(&self, y: f64, theta: &[f64]) -> f64 {
        std_normal_pdf(y - theta[0])
    }
    fn log_density(&self, y: f64, theta: &[f64]) -> f64 {
        let z = y - theta[0];
        -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }
    fn density_grad(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        let z = y - theta[0];
        out[0] = z * std_normal_pdf(z);
    }
    fn score(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        out[0] = y - theta[0];
    }
    fn mle(&self, observations: &[f64]) -> Result<Vec<f64>> {
        if observations.is_empty() {
            return Err(Error::DegenerateData("no observations".into()));
        }
        Ok(vec![observations.iter().sum::<f64>() / observations.len() as f64])
    }
}

/// Bundled model selector used by configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    LinearLatent,
    Location,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::LinearLatent => "linear-latent",
            ModelId::Location => "location",
        }
    }
}

/// Observed data `{Y_t}` with the parameter and seed that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub values: Vec<f64>,
    pub theta_true: f64,
    pub seed: u64,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# theta_true={},seed={}\ny\n", self.theta_true, self.seed);
        for v in &self.values {
            writeln!(s, "{v}").unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::Config("observation file must start with '# theta_true=..,seed=..'".into()))?;
        let mut theta_true = None;
        let mut seed = None;
        for kv in meta.split(',') {
            match kv.split_once('=') {
                Some(("theta_true", v)) => theta_true = v.trim().parse::<f64>().ok(),
                Some(("seed", v)) => seed = v.trim().parse::<u64>().ok(),
                _ => return Err(Error::Config(format!("unexpected header field '{kv}'"))),
            }
        }
        if lines.next().map(str::trim) != Some("y") {
            return Err(Error::Config("missing 'y' column header on line 2".into()));
        }
        let values = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Config(format!("line {}: {e}", i + 3)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservationSet {
            values,
            theta_true: theta_true.ok_or_else(|| Error::Config("missing theta_true".into()))?,
            seed: seed.ok_or_else(|| Error::Config("missing seed".into()))?,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `T` independent draws from `model` at `theta_true`, using the observation
/// stream of `seed`.
pub fn simulate_observations<M: StochasticModel + ?Sized>(
    model: &M,
    theta_true: f64,
    n_obs: usize,
    seed: u64,
) -> Result<ObservationSet> {
    if n_obs == 0 {
        return Err(Error::Contract("T must be at least 1".into()));
    }
    let mut rng = stream(seed, Stream::Observations);
    let theta = [theta_true];
    let values = (0..n_obs).map(|_| model.simulate(&theta, &mut rng)).collect();
    Ok(ObservationSet { values, theta_true, seed })
}

/// Same as [`simulate_observations`] with runtime model selection.
pub fn simulate_for(model: ModelId, theta_true: f64, n_obs: usize, seed: u64) -> Result<ObservationSet> {
    match model {
        ModelId::LinearLatent => simulate_observations(&LinearLatentModel, theta_true, n_obs, seed),
        ModelId::Location => simulate_observations(&LocationModel, theta_true, n_obs, seed),
    }
}

/// Closed-form MLE of the linear latent model: `sqrt(mean(Y²) − 1)`.
pub fn analytic_mle(observations: &[f64]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::DegenerateData("no observations".into()));
    }
    let m2 = observations.iter().map(|y| y * y).sum::<f64>() / observations.len() as f64;
    if m2 <= 1.0 {
        return Err(Error::DegenerateData(format!("mean(Y^2) = {m2} <= 1 has no interior maximizer")));
    }
    Ok((m2 - 1.0).sqrt())
}

/// Gaussian posterior of the location model under a standard normal prior:
/// `N(n ȳ / (1 + n), 1 / (1 + n))`. Returns `(mean, variance)`.
pub fn conjugate_posterior(observations: &[f64]) -> Result<(f64, f64)> {
    let n = observations.len() as f64;
    if observations.is_empty() {
        return Err(Error::Contract("posterior needs at least one observation".into()));
    }
    let ybar = observations.iter().sum::<f64>() / n;
    Ok((n / (1.0 + n) * ybar, 1.0 / (1.0 + n)))
}

/// Score of the standard normal prior.
pub fn prior_logpdf_grad(theta: f64) -> f64 {
    -theta
}

/// Stacked `T × d` analytic score at `theta`.
pub fn score_stack<M: AnalyticOracle + ?Sized>(model: &M, observations: &[f64], theta: &[f64]) -> Vec<f64> {
    let d = theta.len();
    let mut out = vec![0.0; observations.len() * d];
    for (t, &y) in observations.iter().enumerate() {
        model.score(y, theta, &mut out[t * d..(t + 1) * d]);
    }
    out
}
