//! Error curve of a few NMTS runs and its tail slope.
//!
//! `cargo run --release --example rate_slope -- [replications] [iterations]`

use nmts::harness::preset;
use nmts::rates::{loglog_slope, summarize};
use nmts::{aggregate_mae, run_mle, Metric, Variant};

fn main() -> nmts::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().expect("integer argument"));
    let reps = args.next().unwrap_or(8);
    let iterations = args.next().unwrap_or(100_000);
    let mut cfg = preset("rate-mle-N1e2")?;
    cfg.iterations = iterations as i64;
    let records = (0..reps).map(|i| run_mle(&cfg.mle_config(i)?, Variant::Nmts)).collect::<nmts::Result<Vec<_>>>()?;
    let ks = cfg.checkpoints.resolve(cfg.iterations());
    let series = aggregate_mae(&records, Metric::AbsErr, &ks)?;
    let fit = loglog_slope(&series, cfg.tail_fraction)?;
    println!("{}", serde_json::to_string_pretty(&summarize(&series, Metric::AbsErr, cfg.tail_fraction)).unwrap());
    println!("tail slope {:.3} over k in [{}, {}]", fit.slope, fit.window.0, fit.window.1);
    Ok(())
}
