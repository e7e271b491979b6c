//! `fmanova` command-line front end.
//!
//! Exit codes: 0 on success, 2 on input errors, 3 on numerical failures.
//! Test decisions never affect the exit code.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmanova::{DesignKind, Globalizer};

#[derive(Debug, Parser)]
#[command(name = "fmanova", version, about = "Parametric bootstrap tests for multivariate functional MANOVA")]
struct Cli {
    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, env = "FMANOVA_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Global test of one (possibly stacked) hypothesis.
    Test(TestArgs),
    /// Multiple test of every block of the design with FWER control.
    Mtest(TestArgs),
    /// Monte-Carlo size, power and FWER study.
    Simulate(SimulateArgs),
    /// Bootstrap throughput benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Long-format CSV: group,subject,variable,time_index,value.
    #[arg(long)]
    pub data: PathBuf,
    /// Time points, one per line; defaults to a uniform grid on [0, 1].
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_parser = parse_design)]
    pub design: DesignKind,
    /// Number of variables; checked against the data when given.
    #[arg(long)]
    pub p: Option<usize>,
    /// First factor levels (two-way) or repeats (longitudinal).
    #[arg(long, default_value_t = 1)]
    pub a: usize,
    /// Second factor levels (two-way) or dimensions (longitudinal).
    #[arg(long, default_value_t = 1)]
    pub b: usize,
    /// Hypothesized values for the identity design: row,time_index,value.
    #[arg(long)]
    pub c: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_parser = parse_globalizer, default_value = "sup")]
    pub globalizer: Globalizer,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study JSON: a scenario, a list of scenarios, or {"scenarios": [...], "test": {...}}.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long = "B", default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    /// CSV table path; the JSON report goes next to it with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "B", default_value_t = 200)]
    pub replicates: usize,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: fmanova::Error| e.to_string())
}

fn parse_globalizer(s: &str) -> Result<Globalizer, String> {
    s.parse().map_err(|e: fmanova::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let outcome = fmanova::with_threads(threads, move || match &cli.command {
        Command::Test(args) => run::test(args),
        Command::Mtest(args) => run::mtest(args),
        Command::Simulate(args) => run::simulate(args),
        Command::Bench(args) => run::bench(args),
    })
    .and_then(|r| r);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
