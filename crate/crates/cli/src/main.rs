//! `distcount` — simulate distributed counting protocols, reproduce the
//! figure and tradeoff experiments, and run the statistical verification
//! suites.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use distcount::engine::{ProtocolKind, RunConfig, StreamKind};
use distcount::harness::{self, FigureParams, DEFAULT_SEED};
use distcount::verify::{self, Suite};

#[derive(Parser)]
#[command(name = "distcount", version, about = "Distributed counting protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one protocol/stream cell over several seeds and emit transcript
    /// and aggregate CSVs.
    Simulate {
        #[arg(long)]
        protocol: ProtocolKind,
        #[arg(long)]
        stream: StreamKind,
        /// Number of sites.
        #[arg(long)]
        k: usize,
        /// Target relative accuracy in (0, 0.5].
        #[arg(long)]
        eps: f64,
        /// Safety factor of the Robust protocol.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Events per run.
        #[arg(long)]
        events: u64,
        /// Independent seeds.
        #[arg(long)]
        runs: usize,
        /// Master seed; per-run seeds are derived by position.
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Bound the worker pool (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the figure matrix (k in {64, 256}, eps = 0.125, 40 seeds, 1e5
    /// events) and emit aggregate CSVs for messages, ratio and relative
    /// error per protocol and stream.
    Figures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Sweep the epsilon grid for both protocols on both streams and emit
    /// one tradeoff CSV per combination.
    Tradeoff {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        events: u64,
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Run the statistical verification suites and print one pass/fail line
    /// per check. Exits nonzero if any check fails.
    Verify {
        /// One of: distributions, invariants, accuracy, attack. Runs all
        /// suites when omitted.
        #[arg(long)]
        suite: Option<Suite>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { protocol, stream, k, eps, c, events, runs, seed, out, jobs } => {
            let cell = RunConfig::new(k, eps, c, events, seed, protocol, stream)?;
            let written =
                harness::with_jobs(jobs, move || harness::emit_simulation(&out, &cell, runs))??;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Figures { out, seed } => {
            let written = harness::emit_figures(&out, &FigureParams::default(), seed)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Tradeoff { k, events, runs, out, seed } => {
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            for protocol in [ProtocolKind::Hyz12, ProtocolKind::Robust] {
                for stream in [StreamKind::Uniform, StreamKind::Attack] {
                    let points = harness::tradeoff(k, events, runs, protocol, stream, 1.0, seed)?;
                    let path = out.join(format!("tradeoff_{protocol}_{stream}_k{k}.csv"));
                    harness::write_tradeoff_csv(&path, &points)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Verify { suite, seed } => {
            let suites: Vec<Suite> = suite.map_or_else(|| Suite::ALL.to_vec(), |s| vec![s]);
            let mut all_passed = true;
            for suite in suites {
                println!("[suite: {}]", suite.name());
                for outcome in verify::run_suite(suite, seed) {
                    println!("{outcome}");
                    all_passed &= outcome.passed;
                }
            }
            if !all_passed {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
