//! Plugging in a user simulator: `Y = θ + s·X`, `X ~ N(0, 1)` with a known scale `s`.
//!
//! Only the partial derivatives are supplied; the GLR weights come from the
//! generic evaluator.
//!
//! `cargo run --release --example custom_model`

use nmts::glr::unbiasedness_check;
use nmts::models::simulate_observations;
use nmts::rng::{std_normal, stream, SimRng, Stream};
use nmts::{
    run_mle_with, AnalyticOracle, BoxDomain, CheckpointSpec, MleConfig, ModelDerivatives, ModelId, StepSchedule,
    StochasticModel, Variant,
};

struct ScaledLocation {
    scale: f64,
}

impl ModelDerivatives for ScaledLocation {
    fn param_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn g(&self, x: &[f64], theta: &[f64]) -> f64 {
        theta[0] + self.scale * x[0]
    }
    fn dg_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        self.scale
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
    // ψ = −x/s
    fn dpsi_dx1(&self, _x: &[f64], _theta: &[f64]) -> f64 {
        -1.0 / self.scale
    }
    fn dpsi_dtheta(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

impl StochasticModel for ScaledLocation {
    fn sample_latent(&self, _theta: &[f64], rng: &mut SimRng, x: &mut [f64]) {
        x[0] = std_normal(rng);
    }
}

impl AnalyticOracle for ScaledLocation {
    fn density(&self, y: f64, theta: &[f64]) -> f64 {
        self.log_density(y, theta).exp()
    }
    fn log_density(&self, y: f64, theta: &[f64]) -> f64 {
        let z = (y - theta[0]) / self.scale;
        -0.5 * (2.0 * std::f64::consts::PI).ln() - self.scale.ln() - 0.5 * z * z
    }
    fn density_grad(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        out[0] = self.density(y, theta) * (y - theta[0]) / (self.scale * self.scale);
    }
    fn score(&self, y: f64, theta: &[f64], out: &mut [f64]) {
        out[0] = (y - theta[0]) / (self.scale * self.scale);
    }
    fn mle(&self, observations: &[f64]) -> nmts::Result<Vec<f64>> {
        Ok(vec![observations.iter().sum::<f64>() / observations.len() as f64])
    }
}

fn main() -> nmts::Result<()> {
    let model = ScaledLocation { scale: 2.0 };
    let c = unbiasedness_check(&model, &[0.5], 1.5, 1_000_000, &mut stream(4, Stream::Inner))?;
    println!("GLR at y = 1.5: density {:.5} (exact {:.5}), gradient {:.5} (exact {:.5})", c.g2_mean, c.density, c.g1_mean[0], c.density_grad[0]);

    let config = MleConfig {
        // the label only enters the run key; the dynamics come from `model`
        model: ModelId::Location,
        observations: simulate_observations(&model, 1.0, 50, 4)?,
        schedule: StepSchedule::poly_log(20.0, 2.0 / 3.0, 0.5, 1.0)?,
        theta_box: BoxDomain::interval(-5.0, 5.0)?,
        theta0: vec![0.0],
        d0: None,
        n_inner: 200,
        iterations: 20_000,
        seed: 4,
        checkpoints: CheckpointSpec::Geometric { ratio: 10.0, start: 100 },
    };
    let record = run_mle_with(&model, &config, Variant::Nmts)?;
    for row in &record.rows {
        println!("k = {:>6}  theta = {:.4}  |err| = {:.2e}", row.k, row.theta[0], row.abs_err);
    }
    Ok(())
}
