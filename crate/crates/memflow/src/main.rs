use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memflow::{run, RunOptions};

#[derive(Parser)]
#[command(name = "memflow", version, about = "Heat equation with memory: flows, observability, inverse problems and control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate the flow solvers and tabulate the remainder bound.
    FlowCheck(Common),
    /// Tabulate the kernel coefficient functions and check their identities.
    Kernel(Common),
    /// Observation-set functionals and the analytic lower bound.
    Moc(Common),
    /// Two-sided and null observability constants and their trends.
    Obsconst(Common),
    /// Concentrated-bump probe of the weight exponent.
    ProbeAlpha(Common),
    /// Missing-ball probe of null observability.
    ProbeBall(Common),
    /// Local heat-flow leakage probe.
    ProbeHeat(Common),
    /// Recover initial data from masked observations.
    Reconstruct(Common),
    /// Minimal-norm control to a smooth target.
    Control(Common),
    /// Duality between forward inequalities and adjoint range equations.
    Duality(Common),
    /// Run the configured commands and aggregate their results.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output root; artifacts go to <out>/<command>/<config-hash>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "MEMFLOW_THREADS")]
    threads: Option<usize>,
    /// Multiplies every numeric tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::FlowCheck(c) => ("flow-check", c),
            Command::Kernel(c) => ("kernel", c),
            Command::Moc(c) => ("moc", c),
            Command::Obsconst(c) => ("obsconst", c),
            Command::ProbeAlpha(c) => ("probe-alpha", c),
            Command::ProbeBall(c) => ("probe-ball", c),
            Command::ProbeHeat(c) => ("probe-heat", c),
            Command::Reconstruct(c) => ("reconstruct", c),
            Command::Control(c) => ("control", c),
            Command::Duality(c) => ("duality", c),
            Command::Report(c) => ("report", c),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();
    let opts = RunOptions { seed: common.seed, threads: common.threads, tolerance_scale: common.tolerance_scale };
    match run(name, &common.config, &common.out, &opts) {
        Ok(outcome) => {
            for line in &outcome.artifacts.lines {
                println!("{line}");
            }
            for check in &outcome.artifacts.checks {
                let status = if check.passed { "PASS" } else { "FAIL" };
                if check.detail.is_empty() {
                    println!("{status} {}", check.name);
                } else {
                    println!("{status} {} ({})", check.name, check.detail);
                }
            }
            if let Some(dir) = &outcome.dir {
                println!("artifacts: {}", dir.display());
            }
            let failed = outcome.artifacts.failures();
            if failed > 0 {
                eprintln!("error: {failed} check(s) failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
