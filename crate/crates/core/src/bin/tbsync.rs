use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qkd_clocksync::cli::{exit_code, key_help, parse_override, parse_pairs, run, Command, RunConfig};
use qkd_clocksync::{Error, Result};

/// Clock-drift model and circular-mean synchronization for time-bin QKD.
#[derive(Parser)]
#[command(version, after_help = "Run `tbsync keys` for the configuration keys and their defaults.")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set window_width=300ps`. Repeatable; wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write each table to a file in this directory instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Pace synchronization runs in wall-clock time.
    #[arg(long, global = true)]
    realtime: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Drift-induced QBER against the accumulated shift.
    QberCurve,
    /// Largest tolerable shift at the QBER threshold, against distance.
    DriftLimit,
    /// Closed-loop synchronization: ramp, offset recovery, tracking.
    SyncRun,
    /// Relative drift-estimation error over drift and integration time.
    ErrorMap,
    /// Maximum drift, calibration interval and short-term stability bound.
    Constraints,
    /// Long tracking run with TDEV of the recovered timing.
    FieldSim,
    /// List configuration keys.
    Keys,
}

fn execute(args: &Args) -> Result<Option<Error>> {
    let command = match args.command {
        Cmd::QberCurve => Command::QberCurve,
        Cmd::DriftLimit => Command::DriftLimit,
        Cmd::SyncRun => Command::SyncRun,
        Cmd::ErrorMap => Command::ErrorMap,
        Cmd::Constraints => Command::Constraints,
        Cmd::FieldSim => Command::FieldSim,
        Cmd::Keys => {
            print!("{}", key_help());
            return Ok(None);
        }
    };
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        pairs.extend(parse_pairs(&text)?);
    }
    for s in &args.set {
        pairs.push(parse_override(s)?);
    }
    if let Some(seed) = args.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if args.realtime {
        pairs.push(("realtime".into(), "true".into()));
    }
    let cfg = RunConfig::resolve(command, &pairs)?;
    let report = run(&cfg)?;
    match &args.out {
        Some(dir) => report.write_to(dir)?,
        None => std::io::stdout().lock().write_all(report.to_text().as_bytes())?,
    }
    Ok(report.failure)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let err = match execute(&args) {
        Ok(None) => return ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => e,
    };
    eprintln!("tbsync: {err}");
    ExitCode::from(exit_code(&err) as u8)
}
