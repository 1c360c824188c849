use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hotl_cli::{commands, server};

#[derive(Parser)]
#[command(name = "hotl", version, about = "Human-on-the-loop multi-UAV mission engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless and write its event log.
    Run {
        /// Scenario file or shipped scenario name.
        scenario: String,
        /// Operator transcript (JSONL). Defaults to the scenario's own transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Ignore the bundled transcript.
        #[arg(long, conflicts_with = "transcript")]
        no_transcript: bool,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Log destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold a log and print the final state.
    Replay { log: PathBuf },
    /// Re-run a scenario with the transcript recorded in a log and compare bytes.
    Verify {
        scenario: String,
        log: PathBuf,
        #[arg(long)]
        max_ticks: Option<u64>,
    },
    /// Serve the HTTP and WebSocket API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// List shipped scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Cmd::Run { scenario, transcript, no_transcript, max_ticks, out } => {
            let r = commands::run(&scenario, transcript.as_deref(), no_transcript, max_ticks)?;
            match out {
                Some(path) => {
                    fs::write(&path, &r.log).with_context(|| format!("writing {}", path.display()))?;
                    eprintln!("{} events over {} ticks, {} decisions -> {}", r.events, r.ticks, r.decisions, path.display());
                }
                None => print!("{}", r.log),
            }
        }
        Cmd::Replay { log } => println!("{}", commands::replay_log(&log)?),
        Cmd::Verify { scenario, log, max_ticks } => {
            let v = commands::verify_log(&scenario, &log, max_ticks)?;
            if v.identical {
                println!("identical ({} lines)", v.recorded_lines);
            } else {
                println!(
                    "differs at line {} (recorded {} lines, re-run {} lines)",
                    v.first_difference.unwrap_or(0),
                    v.recorded_lines,
                    v.rerun_lines
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Serve { port } => {
            tokio::runtime::Runtime::new()?.block_on(server::serve(port))?;
        }
        Cmd::Scenarios => {
            for name in hotl_core::FIXTURES {
                println!("{name}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
