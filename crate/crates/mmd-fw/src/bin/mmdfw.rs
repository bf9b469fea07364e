//! Experiment runner CLI.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mmd_fw::harness::{self, config::ExperimentConfig, files::atomic_write, HarnessError};

#[derive(Parser)]
#[command(
    name = "mmdfw",
    about = "Greedy particle approximation of posteriors by Frank-Wolfe MMD minimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config; writes
    /// <output>.results.csv and <output>.particles.csv.
    Run { config: PathBuf },
    /// Recompute the squared-MMD curve over every prefix of a stored particle
    /// sequence against a reference sample file.
    Eval {
        particles: PathBuf,
        reference: PathBuf,
        /// TOML document with a single [kernel] table.
        kernel_config: PathBuf,
        /// Write the curve here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw HMC reference samples for a target and write them as a particle
    /// file.
    Sample {
        /// TOML document with a single [target] table.
        target_config: PathBuf,
        /// TOML document with the sampler settings and output path.
        hmc_config: PathBuf,
    },
}

fn read_config_text(path: &PathBuf) -> Result<String, HarnessError> {
    std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let out = harness::run_experiment(&cfg)?;
            println!(
                "wrote {} ({} rows) and {}",
                out.results_path.display(),
                out.table.rows.len(),
                out.particles_path.display()
            );
            Ok(())
        }
        Command::Eval {
            particles,
            reference,
            kernel_config,
            output,
        } => {
            let kernel_text = read_config_text(&kernel_config)?;
            let table = harness::run_eval_command(&particles, &reference, &kernel_text)?;
            let csv = table.to_csv(None);
            match output {
                Some(path) => atomic_write(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Sample {
            target_config,
            hmc_config,
        } => {
            let target_text = read_config_text(&target_config)?;
            let hmc_text = read_config_text(&hmc_config)?;
            let (path, acceptance) = harness::run_sample_command(&target_text, &hmc_text)?;
            println!(
                "wrote {} (acceptance rate {acceptance:.3})",
                path.display()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
