//! Runs a preset through the harness and lists what it wrote.
//!
//! `cargo run --release --example run_preset -- [preset] [out_dir]`

use std::path::PathBuf;

use nmts::harness::{preset, run_experiment, RunOptions};

fn main() -> nmts::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "smoke-table1-row-N1e1".into());
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join(&name));
    let cfg = preset(&name)?;
    let manifest = run_experiment(&cfg, &RunOptions { out_dir: out_dir.clone(), workers: 0 })?;
    println!(
        "{} runs in {:.1} s, {} failed; wrote to {}",
        manifest.replications.len(),
        manifest.total_wall_clock_s,
        manifest.failed,
        out_dir.display()
    );
    for f in manifest.outputs.iter().filter(|f| !f.starts_with("runs/")) {
        println!("  {f}");
    }
    Ok(())
}
