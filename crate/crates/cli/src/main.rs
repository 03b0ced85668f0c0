//! `kfo`: simulation, verification, benchmarking and inverse application for
//! online low-rank factor maintenance.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kfo_cli::{commands, thread_count};

#[derive(Parser)]
#[command(
    name = "kfo",
    version,
    about = "Online low-rank factor-inverse maintenance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the error-metric experiment described by a config file.
    Simulate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `out_dir` from the config, or `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's seed list by this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: KFO_THREADS or the available cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the truncation-error propositions numerically.
    Verify {
        /// "small" finishes within a minute; "standard" runs the full grid.
        #[arg(long, default_value = "small")]
        preset: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Deliberately corrupt one check to exercise the failure path.
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Time maintenance steps across dimensions and fit cost-scaling slopes.
    Bench {
        /// Comma-separated dimensions, e.g. 512,1024,2048,4096.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        r: usize,
        #[arg(long, default_value_t = 32)]
        n_bs: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Apply maintained inverses to factored gradients from stream files.
    Apply {
        #[arg(long)]
        config: PathBuf,
        /// Directory resolving relative paths in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            threads,
        } => commands::simulate::run(&config, out, seed, thread_count(threads)),
        Command::Verify {
            preset,
            out,
            threads,
            inject_bug,
        } => commands::verify::run(&preset, &out, thread_count(threads), inject_bug),
        Command::Bench {
            dims,
            r,
            n_bs,
            reps,
            out,
        } => commands::bench::run(&dims, r, n_bs, reps, &out),
        Command::Apply { config, out } => commands::apply::run(&config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            println!("KFO_ERROR: {}", err.code);
            ExitCode::from(err.exit)
        }
    }
}
