//! Gaussian posterior approximation for the location model.
//!
//! `cargo run --release --example pde_posterior`

use nmts::models::{conjugate_posterior, simulate_for};
use nmts::{run_pde, BoxDomain, CheckpointSpec, GaussianVariational, ModelId, PdeConfig, StepSchedule, Variant};

fn main() -> nmts::Result<()> {
    let observations = simulate_for(ModelId::Location, 1.0, 10, 3)?;
    let (mean, var) = conjugate_posterior(&observations.values)?;
    println!("posterior N({mean:.5}, sd {:.5})", var.sqrt());
    let config = PdeConfig {
        model: ModelId::Location,
        schedule: StepSchedule::poly_log(10.0, 2.0 / 3.0, 1.0, 1.0)?,
        lambda_box: BoxDomain::new(vec![-1.0, 0.01], vec![10.0, 2.0])?,
        lambda0: GaussianVariational::new(0.0, 1.0),
        n_inner: 100,
        n_outer: 10,
        iterations: 20_000,
        seed: 3,
        checkpoints: CheckpointSpec::Geometric { ratio: 10.0, start: 10 },
        observations,
    };
    for variant in [Variant::Nmts, Variant::Sts] {
        let record = run_pde(&config, variant)?;
        let last = record.last().expect("at least one row");
        println!(
            "{}: mu = {:.5}  sigma = {:.5}  |mean err| = {:.2e}  |var err| = {:.2e}",
            variant.name(),
            last.mu,
            last.sigma,
            last.mean_abs_err,
            last.var_abs_err
        );
    }
    Ok(())
}
