//! Distance of the frozen-sample surrogate maximizer from the posterior as M grows.
//!
//! `cargo run --release --example saa_optimum`

use nmts::models::simulate_for;
use nmts::pde::surrogate_error_sweep;
use nmts::rates::loglog_fit;
use nmts::{BoxDomain, GaussianVariational, ModelId};

fn main() -> nmts::Result<()> {
    let counts = [10, 100, 1000, 10_000];
    let reps = 50;
    let bx = BoxDomain::new(vec![-1.0, 0.01], vec![10.0, 2.0])?;
    let mut mean_err = vec![0.0; counts.len()];
    for seed in 0..reps {
        let obs = simulate_for(ModelId::Location, 1.0, 10, seed)?;
        let sweep = surrogate_error_sweep(&obs.values, &counts, seed, &bx, GaussianVariational::new(0.0, 1.0))?;
        for (acc, p) in mean_err.iter_mut().zip(&sweep) {
            *acc += p.error / reps as f64;
        }
    }
    for (m, e) in counts.iter().zip(&mean_err) {
        println!("M = {m:>6}  mean error {e:.3e}");
    }
    let ms: Vec<f64> = counts.iter().map(|&m| m as f64).collect();
    let (slope, _, r2) = loglog_fit(&ms, &mean_err)?;
    println!("log-log slope {slope:.3} (r2 {r2:.3})");
    Ok(())
}
