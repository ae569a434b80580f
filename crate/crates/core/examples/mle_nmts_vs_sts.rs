//! One MLE run of each update rule on the linear latent model.
//!
//! `cargo run --release --example mle_nmts_vs_sts -- [n_inner]`

use nmts::models::{analytic_mle, simulate_for};
use nmts::{run_mle, BoxDomain, CheckpointSpec, MleConfig, ModelId, StepSchedule, Variant};

fn main() -> nmts::Result<()> {
    let n_inner = std::env::args().nth(1).map(|s| s.parse().expect("n_inner must be an integer")).unwrap_or(100);
    let observations = simulate_for(ModelId::LinearLatent, 1.0, 100, 7)?;
    let config = MleConfig {
        model: ModelId::LinearLatent,
        theta_box: BoxDomain::interval(0.5, 2.0)?,
        schedule: StepSchedule::poly_log(20.0, 2.0 / 3.0, 0.1, 1.0)?,
        theta0: vec![0.8],
        d0: None,
        n_inner,
        iterations: 10_000,
        seed: 7,
        checkpoints: CheckpointSpec::Geometric { ratio: 10.0, start: 10 },
        observations,
    };
    println!("closed-form MLE {:.5}", analytic_mle(&config.observations.values)?);
    for variant in [Variant::Nmts, Variant::Sts] {
        let record = run_mle(&config, variant)?;
        println!("{} (N = {n_inner})", variant.name());
        for row in &record.rows {
            println!("  k = {:>6}  theta = {:.5}  |err| = {:.2e}", row.k, row.theta[0], row.abs_err);
        }
        if let Some(f) = &record.failure {
            println!("  stopped at k = {}: {}", f.k, f.cause);
        }
    }
    Ok(())
}
