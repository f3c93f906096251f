use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsl_core::experiment::{execute, Command, ExperimentConfig, RunManifest, RunOptions};
use lsl_core::LslError;

#[derive(Parser)]
#[command(name = "lsl", version, about = "Regularized Lippmann-Schwinger-Lanczos experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate perturbed and background transfer data.
    Simulate(Common),
    /// Run every [[runs]] entry of the config.
    Invert(Common),
    /// Reg-LSL over the [sweep] threshold pairs.
    Sweep(Common),
    /// Reg-LSL on noisy data at each [noise] level.
    Noise(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip stages already completed for the same config.
    #[arg(long)]
    resume: bool,
    /// Directory holding perturbed.lsl to invert instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("LSL_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Invert(a) => (Command::Invert, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Noise(a) => (Command::Noise, a),
    };
    match run(command, args) {
        Ok(manifest) => {
            report(&manifest);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, args: Common) -> Result<RunManifest, LslError> {
    let config = ExperimentConfig::load(&args.config)?;
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
        resume: args.resume,
        data: args.data,
    };
    execute(command, &config, &opts)
}

fn report(manifest: &RunManifest) {
    for stage in &manifest.stages {
        let d = &stage.diagnostics;
        let note = if stage.skipped { " (resumed)" } else { "" };
        if d.get("l2_error").is_some() {
            println!(
                "{:<10} l={:<3} rows={:<4} l2_error={}{note}",
                stage.name, d["model"]["retained"], d["rows"], d["l2_error"]
            );
        } else {
            println!("{:<10} {:.3}s{note}", stage.name, stage.seconds);
        }
    }
}
