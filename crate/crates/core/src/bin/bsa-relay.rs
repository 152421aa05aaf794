use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsa_relay::sim::verify::{run_verify, VerifySettings};
use bsa_relay::sim::{default_workers, emit_results, run_sweep, snr_grid, OutputFormat, Scheme, SweepSpec};
use bsa_relay::system::{ConfigFile, SystemConfig};

#[derive(Parser)]
#[command(name = "bsa-relay", version, about = "Block signal alignment for MIMO two-way relay cellular networks")]
struct Cli {
    /// Worker threads (defaults to BSA_RELAY_WORKERS, then available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Outage probability sweep over SNR.
    Outage(SweepArgs),
    /// Ergodic capacity sweep over SNR.
    Capacity(SweepArgs),
    /// Run the invariant suite; exits nonzero on any violation.
    Verify {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random probes per optimality check.
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// JSON system configuration; the 4-antenna, 2-user layout if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    snr_start: f64,
    #[arg(long, default_value_t = 25.0, allow_hyphen_values = true)]
    snr_stop: f64,
    #[arg(long, default_value_t = 5.0)]
    snr_step: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated scheme list.
    #[arg(long, default_value = "bsa-deterministic,bsa-alg1,bsa-alg2,p2psa,time-sharing")]
    schemes: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

fn sweep(args: &SweepArgs, workers: usize) -> bsa_relay::Result<()> {
    let config = match &args.config {
        Some(path) => ConfigFile::load(path)?.resolve()?,
        None => SystemConfig::default_layout(),
    };
    let grid = snr_grid(args.snr_start, args.snr_stop, args.snr_step)?;
    let schemes = Scheme::parse_list(&args.schemes)?;
    let spec = SweepSpec::new(config, schemes, grid, args.trials, args.seed);
    let result = run_sweep(&spec, workers)?;
    emit_results(&result, &args.out, args.format.parse::<OutputFormat>()?)?;
    eprintln!("wrote {} rows to {}", result.rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or_else(default_workers);
    let outcome = match &cli.command {
        Command::Outage(args) | Command::Capacity(args) => sweep(args, workers),
        Command::Verify { trials, seed, probes } => {
            let mut settings = VerifySettings::new(*trials, *seed);
            settings.probes = *probes;
            match run_verify(&settings, workers) {
                Ok(report) => {
                    for c in &report.checks {
                        let tag = if c.passed() { "ok  " } else { "FAIL" };
                        println!("{tag} {:<28} worst {:.3e}  limit {:.1e}", c.name, c.worst, c.limit);
                    }
                    if report.passed() {
                        println!("all invariants hold over {} trials", report.trials);
                        return ExitCode::SUCCESS;
                    }
                    return ExitCode::FAILURE;
                }
                Err(e) => Err(e),
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
