//! Generalized likelihood ratio (GLR) estimators of an intractable density
//! `p(y; θ)` and its parameter gradient.
//!
//! For a simulator `Y = g(X; θ)` with latent density `f(x; θ)`, the density
//! estimator is `G₂ = 1{g(x;θ) ≤ y} ψ(x;θ)` with
//!
//! ```text
//! ψ = (∂g/∂x₁)⁻¹ (∂log f/∂x₁ − ∂²g/∂x₁² (∂g/∂x₁)⁻¹)
//! ```
//!
//! and the gradient estimator is
//!
//! ```text
//! G₁ = 1{g ≤ y} ( ∂log f/∂θ + ∂ψ/∂θ
//!                 − (∂g/∂x₁)⁻¹ [ ∂²g/∂θ∂x₁ + w · { ∂ψ/∂x₁ + ψ (∂log f/∂x₁ − ∂²g/∂x₁² (∂g/∂x₁)⁻¹) } ] )
//! ```
//!
//! where the weight `w` is `∂g/∂θ` (a `d`-vector). The alternative reading
//! `w = ∂g/∂x₁` is kept behind [`G1Reading::DgDx1`]; it agrees with `∂g/∂θ`
//! for location families but is biased for the linear latent model.
//!
//! Both estimators depend on `y` only through the indicator, so a batch of
//! `N` draws is evaluated against all `T` observations in `O(N log T + T)`
//! by bucketing each draw at its output rank among the sorted observations.

use crate::error::{Error, Result};
use crate::models::{AnalyticOracle, StochasticModel};
use crate::rng::SimRng;

/// Partial derivatives of `g` and `log f` (and of ψ) that the GLR formulas need.
///
/// `x₁` is the first latent coordinate. Vector-valued partials are written
/// into `out`, which has length [`param_dim`](ModelDerivatives::param_dim).
pub trait ModelDerivatives {
    fn param_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn g(&self, x: &[f64], theta: &[f64]) -> f64;
    fn dg_dx1(&self, x: &[f64], theta: &[f64]) -> f64;
    fn d2g_dx1x1(&self, x: &[f64], theta: &[f64]) -> f64;
    fn dg_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn d2g_dtheta_dx1(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn dlogf_dx1(&self, x: &[f64], theta: &[f64]) -> f64;
    fn dlogf_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn dpsi_dx1(&self, x: &[f64], theta: &[f64]) -> f64;
    fn dpsi_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
}

/// Which factor multiplies the braced term of the G₁ expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum G1Reading {
    /// `∂g/∂θ`; unbiased for both bundled models.
    #[default]
    DgDtheta,
    /// `∂g/∂x₁` as a scalar broadcast over all `d` components.
    DgDx1,
}

/// One draw's (G₁, G₂) at a fixed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrSample {
    pub g1: Vec<f64>,
    pub g2: f64,
}

fn inv_dg_dx1<M: ModelDerivatives + ?Sized>(model: &M, x: &[f64], theta: &[f64]) -> Result<f64> {
    let gx = model.dg_dx1(x, theta);
    if gx == 0.0 || !gx.is_finite() {
        return Err(Error::Singularity(format!("dg/dx1 = {gx} at x = {x:?}, theta = {theta:?}")));
    }
    Ok(1.0 / gx)
}

/// `ψ(x; θ)`.
pub fn psi<M: ModelDerivatives + ?Sized>(model: &M, x: &[f64], theta: &[f64]) -> Result<f64> {
    let inv = inv_dg_dx1(model, x, theta)?;
    let value = inv * (model.dlogf_dx1(x, theta) - model.d2g_dx1x1(x, theta) * inv);
    finite(value, "psi")
}

/// Indicator-free GLR weights: returns ψ (the G₂ weight) and writes the G₁
/// weight into `g1`, evaluating the generic expression from the partials.
pub fn generic_weights<M: ModelDerivatives + ?Sized>(
    model: &M,
    x: &[f64],
    theta: &[f64],
    reading: G1Reading,
    g1: &mut [f64],
) -> Result<f64> {
    let d = model.param_dim();
    if g1.len() != d {
        return Err(Error::Contract(format!("g1 buffer has length {} but d = {d}", g1.len())));
    }
    let inv = inv_dg_dx1(model, x, theta)?;
    let gx = 1.0 / inv;
    let inner = model.dlogf_dx1(x, theta) - model.d2g_dx1x1(x, theta) * inv;
    let psi = inv * inner;
    let brace = model.dpsi_dx1(x, theta) + psi * inner;

    let mut dlogf = vec![0.0; d];
    let mut dpsi = vec![0.0; d];
    let mut cross = vec![0.0; d];
    let mut weight = vec![gx; d];
    model.dlogf_dtheta(x, theta, &mut dlogf);
    model.dpsi_dtheta(x, theta, &mut dpsi);
    model.d2g_dtheta_dx1(x, theta, &mut cross);
    if reading == G1Reading::DgDtheta {
        model.dg_dtheta(x, theta, &mut weight);
    }
    for j in 0..d {
        g1[j] = dlogf[j] + dpsi[j] - inv * (cross[j] + weight[j] * brace);
        finite(g1[j], "G1")?;
    }
    finite(psi, "psi")
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Singularity(format!("{what} evaluated to {v}")))
    }
}

#[inline]
fn indicator<M: ModelDerivatives + ?Sized>(model: &M, x: &[f64], y: f64, theta: &[f64]) -> bool {
    model.g(x, theta) <= y
}

/// `G₂(x, y, θ) = 1{g(x;θ) ≤ y} ψ(x;θ)`; unbiased for `p(y; θ)`.
pub fn glr_density_sample<M: StochasticModel + ?Sized>(model: &M, x: &[f64], y: f64, theta: &[f64]) -> Result<f64> {
    let mut g1 = vec![0.0; model.param_dim()];
    let psi = model.glr_weights(x, theta, &mut g1)?;
    Ok(if indicator(model, x, y, theta) { psi } else { 0.0 })
}

/// `G₁(x, y, θ)`; unbiased for `∇_θ p(y; θ)`.
pub fn glr_density_grad_sample<M: StochasticModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let mut g1 = vec![0.0; model.param_dim()];
    model.glr_weights(x, theta, &mut g1)?;
    if !indicator(model, x, y, theta) {
        g1.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(g1)
}

/// Both estimators for one draw.
pub fn glr_sample<M: StochasticModel + ?Sized>(model: &M, x: &[f64], y: f64, theta: &[f64]) -> Result<GlrSample> {
    let mut g1 = vec![0.0; model.param_dim()];
    let psi = model.glr_weights(x, theta, &mut g1)?;
    if indicator(model, x, y, theta) {
        Ok(GlrSample { g1, g2: psi })
    } else {
        g1.iter_mut().for_each(|v| *v = 0.0);
        Ok(GlrSample { g1, g2: 0.0 })
    }
}

/// Per-observation means of G₁ and G₂ over one batch of `n_inner` draws.
///
/// `g1_mean` is row-major `T × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEstimate {
    pub g1_mean: Vec<f64>,
    pub g2_mean: Vec<f64>,
    pub n_inner: usize,
    pub param_dim: usize,
}

impl BatchEstimate {
    pub fn zeros(n_obs: usize, param_dim: usize) -> Self {
        BatchEstimate { g1_mean: vec![0.0; n_obs * param_dim], g2_mean: vec![0.0; n_obs], n_inner: 0, param_dim }
    }

    pub fn n_obs(&self) -> usize {
        self.g2_mean.len()
    }

    pub fn g1(&self, t: usize) -> &[f64] {
        &self.g1_mean[t * self.param_dim..(t + 1) * self.param_dim]
    }
}

/// Reusable batch evaluator bound to one observation set.
#[derive(Debug, Clone)]
pub struct BatchEstimator {
    order: Vec<usize>,
    sorted_y: Vec<f64>,
    param_dim: usize,
    latent: Vec<f64>,
    w1: Vec<f64>,
    bucket1: Vec<f64>,
    bucket2: Vec<f64>,
}

impl BatchEstimator {
    pub fn new<M: StochasticModel + ?Sized>(model: &M, observations: &[f64]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Contract("at least one observation is required".into()));
        }
        if observations.iter().any(|y| y.is_nan()) {
            return Err(Error::Contract("observations contain NaN".into()));
        }
        let mut order: Vec<usize> = (0..observations.len()).collect();
        order.sort_by(|&i, &j| observations[i].total_cmp(&observations[j]).then(i.cmp(&j)));
        let sorted_y = order.iter().map(|&i| observations[i]).collect();
        let d = model.param_dim();
        let t = observations.len();
        Ok(BatchEstimator {
            order,
            sorted_y,
            param_dim: d,
            latent: vec![0.0; model.latent_dim()],
            w1: vec![0.0; d],
            bucket1: vec![0.0; (t + 1) * d],
            bucket2: vec![0.0; t + 1],
        })
    }

    pub fn n_obs(&self) -> usize {
        self.order.len()
    }

    /// Draws `n_inner` latent samples once and averages both estimators for
    /// every observation against that shared batch.
    pub fn estimate_into<M: StochasticModel + ?Sized>(
        &mut self,
        model: &M,
        rng: &mut SimRng,
        n_inner: usize,
        theta: &[f64],
        out: &mut BatchEstimate,
    ) -> Result<()> {
        if n_inner == 0 {
            return Err(Error::Contract("inner sample count N must be at least 1".into()));
        }
        let d = self.param_dim;
        let t = self.n_obs();
        if theta.len() != d {
            return Err(Error::Contract(format!("theta has length {} but d = {d}", theta.len())));
        }
        if out.g2_mean.len() != t || out.param_dim != d {
            *out = BatchEstimate::zeros(t, d);
        }
        self.bucket1.iter_mut().for_each(|v| *v = 0.0);
        self.bucket2.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..n_inner {
            model.sample_latent(theta, rng, &mut self.latent);
            let psi = model.glr_weights(&self.latent, theta, &mut self.w1)?;
            let out_y = model.g(&self.latent, theta);
            // First sorted observation with y >= g; all later ones include this draw.
            let j = self.sorted_y.partition_point(|&y| y < out_y);
            self.bucket2[j] += psi;
            for (b, w) in self.bucket1[j * d..(j + 1) * d].iter_mut().zip(&self.w1) {
                *b += w;
            }
        }
        let inv_n = 1.0 / n_inner as f64;
        let mut acc2 = 0.0;
        let mut acc1 = vec![0.0; d];
        for s in 0..t {
            acc2 += self.bucket2[s];
            for (a, b) in acc1.iter_mut().zip(&self.bucket1[s * d..(s + 1) * d]) {
                *a += b;
            }
            let obs = self.order[s];
            out.g2_mean[obs] = acc2 * inv_n;
            for (o, a) in out.g1_mean[obs * d..(obs + 1) * d].iter_mut().zip(&acc1) {
                *o = a * inv_n;
            }
        }
        out.n_inner = n_inner;
        Ok(())
    }
}

/// Convenience wrapper around [`BatchEstimator`].
pub fn batch_estimates<M: StochasticModel + ?Sized>(
    model: &M,
    rng: &mut SimRng,
    n_inner: usize,
    observations: &[f64],
    theta: &[f64],
) -> Result<BatchEstimate> {
    let mut est = BatchEstimator::new(model, observations)?;
    let mut out = BatchEstimate::zeros(observations.len(), model.param_dim());
    est.estimate_into(model, rng, n_inner, theta, &mut out)?;
    Ok(out)
}

/// Direct `O(N·T)` evaluation with the same draw order as [`batch_estimates`].
/// Reference implementation for tests and small problems.
pub fn batch_estimates_naive<M: StochasticModel + ?Sized>(
    model: &M,
    rng: &mut SimRng,
    n_inner: usize,
    observations: &[f64],
    theta: &[f64],
) -> Result<BatchEstimate> {
    if n_inner == 0 || observations.is_empty() {
        return Err(Error::Contract("N and T must be at least 1".into()));
    }
    let d = model.param_dim();
    let draws: Vec<Vec<f64>> = (0..n_inner)
        .map(|_| {
            let mut x = vec![0.0; model.latent_dim()];
            model.sample_latent(theta, rng, &mut x);
            x
        })
        .collect();
    let mut out = BatchEstimate::zeros(observations.len(), d);
    for (t, &y) in observations.iter().enumerate() {
        for x in &draws {
            let s = glr_sample(model, x, y, theta)?;
            out.g2_mean[t] += s.g2;
            for j in 0..d {
                out.g1_mean[t * d + j] += s.g1[j];
            }
        }
    }
    let n = n_inner as f64;
    out.g1_mean.iter_mut().for_each(|v| *v /= n);
    out.g2_mean.iter_mut().for_each(|v| *v /= n);
    out.n_inner = n_inner;
    Ok(out)
}

/// Monte Carlo means of G₂ and G₁ at one `(θ, y)` against the closed forms.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct UnbiasednessCheck {
    pub theta: Vec<f64>,
    pub y: f64,
    pub draws: usize,
    pub g2_mean: f64,
    pub g2_stderr: f64,
    pub density: f64,
    pub g1_mean: Vec<f64>,
    pub g1_stderr: Vec<f64>,
    pub density_grad: Vec<f64>,
}

impl UnbiasednessCheck {
    /// Largest `|mean − exact| / stderr` over G₂ and every G₁ component.
    pub fn max_z(&self) -> f64 {
        let z2 = (self.g2_mean - self.density).abs() / self.g2_stderr;
        (0..self.g1_mean.len())
            .map(|j| (self.g1_mean[j] - self.density_grad[j]).abs() / self.g1_stderr[j])
            .fold(z2, f64::max)
    }
}

pub fn unbiasedness_check<M: StochasticModel + AnalyticOracle + ?Sized>(
    model: &M,
    theta: &[f64],
    y: f64,
    draws: usize,
    rng: &mut SimRng,
) -> Result<UnbiasednessCheck> {
    if draws < 2 {
        return Err(Error::Contract("need at least two draws".into()));
    }
    let d = model.param_dim();
    let mut x = vec![0.0; model.latent_dim()];
    let (mut s2, mut q2) = (0.0, 0.0);
    let (mut s1, mut q1) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..draws {
        model.sample_latent(theta, rng, &mut x);
        let g = glr_sample(model, &x, y, theta)?;
        s2 += g.g2;
        q2 += g.g2 * g.g2;
        for j in 0..d {
            s1[j] += g.g1[j];
            q1[j] += g.g1[j] * g.g1[j];
        }
    }
    let n = draws as f64;
    let se = |s: f64, q: f64| ((q / n - (s / n).powi(2)).max(0.0) * n / (n - 1.0) / n).sqrt();
    let mut density_grad = vec![0.0; d];
    model.density_grad(y, theta, &mut density_grad);
    Ok(UnbiasednessCheck {
        theta: theta.to_vec(),
        y,
        draws,
        g2_mean: s2 / n,
        g2_stderr: se(s2, q2),
        density: model.density(y, theta),
        g1_mean: s1.iter().map(|s| s / n).collect(),
        g1_stderr: s1.iter().zip(&q1).map(|(&s, &q)| se(s, q)).collect(),
        density_grad,
    })
}
