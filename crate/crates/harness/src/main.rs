use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harness::{load_config, report::report, run_experiment, HarnessError, Overrides};

#[derive(Parser)]
#[command(name = "uqdyn", version, about = "Surrogate-modelling experiments for dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed (overrides `seed` in the config)
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a configuration file without running it
    ValidateConfig { path: PathBuf },
    /// Verify an artifact directory and summarise its metrics
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out, seed, jobs } => {
            if let Some(j) = jobs {
                if j == 0 {
                    return Err(HarnessError::Config { line: None, column: None, message: "--jobs must be at least 1".into() });
                }
                rayon::ThreadPoolBuilder::new().num_threads(j).build_global().expect("thread pool is configured once");
            }
            let (resolved, dir) = load_config(&config, &Overrides { out, seed })?;
            let outcome = run_experiment(&resolved, &dir)?;
            print!("{}", report(&dir)?);
            if !outcome.manifest.failures.is_empty() {
                log::warn!("{} forecasts diverged; see the manifest", outcome.manifest.failures.len());
            }
            Ok(())
        }
        Command::ValidateConfig { path } => {
            let (resolved, dir) = load_config(&path, &Overrides::default())?;
            println!(
                "ok: {} with {} ED and {} validation traces into {}",
                serde_json::to_value(resolved.kind).unwrap_or_default().as_str().unwrap_or(""),
                resolved.ed_size,
                resolved.validation_size,
                dir.display()
            );
            Ok(())
        }
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(())
        }
    }
}
