use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use swnet::exec::{execute, EXIT_ERROR};
use swnet::scenario::parse_scenario;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Analyze,
    Simulate,
    Fluid,
    Lift,
    Collapse,
    Iqcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Analyze => "analyze",
            Self::Simulate => "simulate",
            Self::Fluid => "fluid",
            Self::Lift => "lift",
            Self::Collapse => "collapse",
            Self::Iqcheck => "iqcheck",
        }
    }
}

/// Switched-network scheduling laboratory.
///
/// Exit status: 0 on success, 2 when a checked property fails, 1 on error.
#[derive(Parser, Debug)]
#[command(name = "swnet", version)]
struct Cli {
    command: Command,
    /// Scenario file, or `-` for stdin.
    scenario: PathBuf,
    /// Output directory (overrides the scenario's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the scenario's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "SWNET_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    let mut scenario = match parse_scenario(&cli.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| scenario.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match execute(&scenario, &out, Some(cli.command.name())) {
        Ok(o) => {
            println!("{}: {}", cli.command.name(), o.summary);
            for f in &o.files {
                println!("  {}", out.join(f).display());
            }
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
