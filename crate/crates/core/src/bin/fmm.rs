use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmm_core::cli::{self, RunOptions, SweepMode};
use fmm_core::error::FmmError;
use fmm_core::input::{Distribution, Precision};

#[derive(Parser)]
#[command(name = "fmm", version, about = "Distributed uniform-octree KIFMM on a simulated multi-rank transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a binary point file (and optionally a charge file).
    Generate {
        #[arg(long, default_value = "uniform_cube")]
        dist: Distribution,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "f64")]
        precision: Precision,
        /// Output point file; charges go to `<out>.charges.bin`.
        #[arg(long)]
        out: PathBuf,
        /// Also write random charges in [0, 1).
        #[arg(long)]
        charges: bool,
    },
    /// Compare the distributed run against the single-rank reference and direct summation.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 8)]
        p: usize,
        /// Damage a ghost buffer to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Weak or strong scaling over P = 8^global_depth.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated world sizes, each a power of eight.
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 64])]
        p: Vec<usize>,
        #[arg(long, default_value = "weak")]
        mode: SweepMode,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "uniform_cube")]
    dist: Distribution,
    /// Total points (per rank for weak sweeps).
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Defaults to the smallest depth with at least one root per rank.
    #[arg(long)]
    global_depth: Option<u32>,
    #[arg(long, default_value_t = 2)]
    local_depth: u32,
    #[arg(long, default_value_t = 6)]
    order: usize,
    #[arg(long, default_value = "f64")]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Output prefix; each written file appends its own suffix.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples per rank for splitter selection.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Read points from a file written by `generate` instead of generating them.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    charges: Option<PathBuf>,
    /// Run the near field after the exchange instead of overlapping it.
    #[arg(long)]
    no_overlap: bool,
}

impl RunArgs {
    fn options(self) -> RunOptions {
        let mut o = RunOptions::new(self.dist, self.n);
        o.input.seed = self.seed;
        o.input.points = self.points;
        o.input.charges = self.charges;
        o.global_depth = self.global_depth;
        o.local_depth = self.local_depth;
        o.order = self.order;
        o.precision = self.precision;
        o.repeats = self.repeats;
        o.samples_per_rank = self.samples;
        o.overlap_near_field = !self.no_overlap;
        o.out = self.out;
        o
    }
}

fn run(cli: Cli) -> Result<bool, FmmError> {
    match cli.command {
        Command::Generate {
            dist,
            n,
            seed,
            precision,
            out,
            charges,
        } => {
            for path in cli::generate(dist, n, seed, precision, &out, charges)? {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Verify { run, p, inject_fault } => {
            let mut opts = run.options();
            opts.inject_fault = inject_fault;
            let report = cli::verify(&opts, p)?;
            print_report(&report);
            Ok(report.passed)
        }
        Command::Sweep { run, p, mode } => {
            let report = cli::sweep(&run.options(), &p, mode)?;
            print_report(&report);
            Ok(report.passed)
        }
    }
}

fn print_report(report: &cli::Report) {
    for line in &report.lines {
        println!("{line}");
    }
    for path in &report.files {
        println!("wrote {}", path.display());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
