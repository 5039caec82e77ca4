//! Command-line front end. Exit status: 0 success, 1 unreadable or invalid
//! input, 2 an invariant violation or a transcript that does not verify.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use vhaha_core::detector::predicted_detection_time;
use vhaha_core::engine::run_experiment;

use crate::compare::{compare_modes, render_table, Row};
use crate::report::{emit_report, Format};
use crate::scenario_file::{emit_scenario, parse_scenario};
use crate::transcript::{check, emit_transcript, generate, generator_names, parse_transcript, render};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vhaha", about = "Home-agent redundancy simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Write the event trace here, followed by its hash.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario under every redundancy mode.
    Compare { scenario: PathBuf },
    /// Print a scenario in canonical form.
    Normalize { scenario: PathBuf },
    /// Replay a registration transcript against fresh principals.
    VerifyTranscript { transcript: PathBuf },
    /// Write a canned registration transcript.
    GenTranscript {
        /// honest, replay-<kind>, tamper:<step>:<bit>, forged-witness,
        /// two-session-replay or lost-reply.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        bits: u32,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Detection and recovery latency for a heartbeat period and overlay
    /// propagation delay, in seconds.
    Predict {
        #[arg(long)]
        th: f64,
        #[arg(long)]
        prop: f64,
    },
}

/// Run the CLI on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
    }
}

fn read(path: &PathBuf) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<u8, String> {
    let io = |e: std::io::Error| e.to_string();
    match cmd {
        Command::Run {
            scenario,
            seed,
            format,
            trace,
        } => {
            let mut cfg = parse_scenario(&read(&scenario)?).map_err(|e| format!("{}:\n{e}", scenario.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
            if let Some(path) = trace {
                let mut text = outcome.trace.join("\n");
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&format!("# trace_hash {}\n", outcome.report.trace_hash));
                fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            out.write_all(emit_report(&outcome.report, format).as_bytes()).map_err(io)?;
            Ok(if outcome.report.invariant_violations.is_empty() {
                EXIT_OK
            } else {
                EXIT_VIOLATION
            })
        }
        Command::Compare { scenario } => {
            let cfg = parse_scenario(&read(&scenario)?).map_err(|e| format!("{}:\n{e}", scenario.display()))?;
            let results = compare_modes(&cfg).map_err(|e| e.to_string())?;
            let rows: Vec<Row> = results.into_iter().map(|(r, _)| r).collect();
            out.write_all(render_table(&rows).as_bytes()).map_err(io)?;
            Ok(if rows.iter().all(|r| r.invariant_violations == 0) {
                EXIT_OK
            } else {
                EXIT_VIOLATION
            })
        }
        Command::Normalize { scenario } => {
            let cfg = parse_scenario(&read(&scenario)?).map_err(|e| format!("{}:\n{e}", scenario.display()))?;
            out.write_all(emit_scenario(&cfg).as_bytes()).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::VerifyTranscript { transcript } => {
            let t = parse_transcript(&read(&transcript)?).map_err(|e| format!("{}: {e}", transcript.display()))?;
            let checked = check(&t).map_err(|e| e.to_string())?;
            out.write_all(render(&checked).as_bytes()).map_err(io)?;
            Ok(if checked.ok() { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::GenTranscript { kind, seed, bits, out: path } => {
            let t = generate(&kind, seed, bits)
                .map_err(|e| format!("{e}; known: {}", generator_names().join(", ")))?;
            let text = emit_transcript(&t);
            match path {
                Some(p) => fs::write(&p, text).map_err(|e| format!("{}: {e}", p.display()))?,
                None => out.write_all(text.as_bytes()).map_err(io)?,
            }
            Ok(EXIT_OK)
        }
        Command::Predict { th, prop } => {
            let t = predicted_detection_time(th, prop).map_err(|e| e.to_string())?;
            writeln!(out, "t_fd_r = 3 x {th} + {prop} = {t:.6} s").map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}
