use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nestedtx::harness::{fuzz, metrics, parse, run, RunOptions, Scenario};

#[derive(Parser)]
#[command(version, about = "Nested transactions on a simulated multi-site file system")]
struct Cli {
    /// Write the execution trace here.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Stop after this many events and report a livelock.
    #[arg(long, global = true)]
    step_limit: Option<u64>,
    /// Override the scenario's page size (bytes).
    #[arg(long, global = true)]
    page_size: Option<usize>,
    /// Override the scenario's lock retry limit.
    #[arg(long, global = true)]
    retry_limit: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and check its expectations.
    Run { file: PathBuf },
    /// Like `run`, with the serializability oracle enabled.
    Check { file: PathBuf },
    /// Run seeded random scenarios through every oracle.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: u64,
    },
    /// Compare message and durable-write counts of two scenarios.
    Metrics { base: PathBuf, txn: PathBuf },
}

impl Cli {
    fn load(&self, path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(p) = self.page_size {
            s.spec.page_size = p;
        }
        if let Some(r) = self.retry_limit {
            s.spec.config.retry_limit = r;
        }
        Ok(s)
    }

    fn options(&self, oracles: bool) -> RunOptions {
        let mut o = RunOptions { oracles, ..RunOptions::default() };
        if let Some(n) = self.step_limit {
            o.step_limit = n;
        }
        o
    }

    fn write_trace(&self, trace: &str) -> Result<()> {
        if let Some(p) = &self.trace {
            fs::write(p, trace).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let ok = match &cli.command {
        Command::Run { file } | Command::Check { file } => {
            let s = cli.load(file)?;
            let report = run(&s, &cli.options(matches!(cli.command, Command::Check { .. })));
            cli.write_trace(&report.trace)?;
            print!("{}", report.summary());
            report.passed()
        }
        Command::Fuzz { seed, count } => {
            let summary = fuzz::run_many(*seed, *count, &cli.options(true));
            for f in &summary.failures {
                println!("seed {} FAILED\n{}\n--- scenario ---\n{}", f.seed, f.report, f.scenario);
            }
            println!(
                "fuzz: {} runs, {} failures, {} committed top-level transactions",
                summary.runs,
                summary.failures.len(),
                summary.committed
            );
            summary.failures.is_empty()
        }
        Command::Metrics { base, txn } => {
            let (b, t) = (cli.load(base)?, cli.load(txn)?);
            let report = metrics::compare_metrics(&b, &t, &cli.options(false));
            print!("{report}");
            report.base_passed && report.txn_passed
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
