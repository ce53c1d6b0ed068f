use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbdw_pipeline::{offline, online, online_no_truth, report, selftest, OnlineOptions, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "pbdw", about = "Dictionary-based PBDW recovery experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Snapshots, dictionary, POD modes and sketched blocks.
    Offline {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Recovers the test set with every configured comparator.
    Online {
        #[arg(long)]
        run_dir: PathBuf,
        /// Test-set seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Dictionary recovery only, from stored observations.
        #[arg(long, requires = "observations")]
        no_truth: bool,
        /// Observation array (`.bin` with its `.json` manifest).
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        emit_path_debug: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Merges online results of one or more runs.
    Report {
        #[arg(long = "run-dir", required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Quick invariant checks.
    Selftest,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.verb {
        Verb::Offline { config, run_dir, force } => {
            let cfg = RunConfig::load(&config)?;
            let dir = run_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let run = offline(&cfg, &dir, force)?;
            println!("offline artifacts in {} (m = {}, N = {})", dir.display(), run.manifest.m, run.manifest.n_dofs);
        }
        Verb::Online { run_dir, seed, no_truth, observations, emit_path_debug, workers } => {
            let opts = OnlineOptions { seed, workers, emit_path_debug };
            if no_truth {
                let obs = observations.expect("clap enforces --observations");
                let rows = online_no_truth(&run_dir, &obs, &opts)?;
                println!("{} recoveries written", rows.len());
            } else {
                let out = online(&run_dir, &opts)?;
                println!("method,k,m,mean,max,n");
                for r in &out.table.rows {
                    println!("{},{},{},{:.6e},{:.6e},{}", r.method, r.k, r.m, r.mean, r.max, r.n);
                }
            }
        }
        Verb::Report { run_dirs, out } => {
            let dirs: Vec<&std::path::Path> = run_dirs.iter().map(PathBuf::as_path).collect();
            let rep = report(&dirs, &out)?;
            println!("{} error rows, {} constants rows in {}", rep.errors.len(), rep.constants.len(), out.display());
        }
        Verb::Selftest => {
            let checks = selftest::selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(PipelineError::Numerical("self-test failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
