use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmts::harness::{self, RunOptions};

#[derive(Parser)]
#[command(name = "nmts", version, about = "Replicated likelihood-free estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset or a config file.
    Run(RunArgs),
    /// List the built-in presets.
    List,
    /// Print a preset's full configuration.
    Describe { name: String },
    /// Check presets against the reference settings.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<i64>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $NMTS_OUT_DIR/<name> or nmts-out/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn run(args: RunArgs) -> nmts::Result<bool> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => harness::load_config(path)?,
        (None, Some(name)) => harness::preset(name)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    let out_dir = args.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| harness::default_out_dir(&cfg.name));
    let manifest = harness::run_experiment(&cfg, &RunOptions { out_dir: out_dir.clone(), workers: args.workers })?;
    eprintln!(
        "{}: {} replication(s), {} failed, {:.1}s -> {}",
        cfg.name,
        manifest.replications.len(),
        manifest.failed,
        manifest.total_wall_clock_s,
        out_dir.display()
    );
    Ok(!manifest.failed_too_often())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::List => {
            print!("{}", harness::list_presets());
            Ok(true)
        }
        Command::Describe { name } => harness::describe(&name).map(|d| {
            print!("{d}");
            true
        }),
        Command::Selftest => harness::selftest().map(|r| {
            print!("{r}");
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("more than 10% of replications failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
