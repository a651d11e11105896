//! Deterministic scenario runner.

use std::path::PathBuf;
use std::process::ExitCode;

use blockfw_core::harness::{compare_runs, run_scenario, HarnessError, MetricsReport, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockfw-sim", about = "Run firewall-chain scenarios in virtual time")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a bundled scenario (e1, e2, e3) or a scenario file.
    Run {
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Diff two metrics CSV files.
    Compare { a: PathBuf, b: PathBuf },
    /// Print a bundled scenario.
    Show { name: String },
}

fn read_report(path: &PathBuf) -> Result<MetricsReport, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    MetricsReport::from_csv(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(report: &MetricsReport, out: &Option<PathBuf>) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, report.to_csv()).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            report,
        } => {
            let s = Scenario::resolve(&scenario).map_err(|e| e.to_string())?;
            match run_scenario(&s, seed) {
                Ok(r) => {
                    emit(&r, &report)?;
                    Ok(true)
                }
                Err(HarnessError::Assertion {
                    failures, report: r, ..
                }) => {
                    emit(&r, &report)?;
                    for f in &failures {
                        eprintln!("FAILED {f}");
                    }
                    Ok(false)
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Cmd::Compare { a, b } => {
            let diff = compare_runs(&read_report(&a)?, &read_report(&b)?).map_err(|e| e.to_string())?;
            for d in &diff {
                println!(
                    "{}: {} -> {}",
                    d.metric,
                    d.a.as_deref().unwrap_or("-"),
                    d.b.as_deref().unwrap_or("-")
                );
            }
            Ok(diff.is_empty())
        }
        Cmd::Show { name } => {
            let text = blockfw_core::harness::bundled(&name).ok_or(format!("no bundled scenario `{name}`"))?;
            print!("{text}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
