//! `iqcal` — runs seeded IQ-mixer calibration scenarios from config files.
//!
//! Exit codes: `0` success, `2` config problems (parse or validation), `3`
//! runtime failures (I/O and unexpected simulation errors), `4` violated
//! scenario assumptions (the run started but the model's preconditions
//! collapsed, e.g. every estimator frame was rejected).

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use iqcal_cli::config::{self, Kind, ScenarioConfig, TraceFormat};
use iqcal_cli::{run, trace};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_ASSUMPTION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "iqcal",
    version,
    about = "Seeded IQ-mixer calibration scenarios: drift, transmit, receive, and joint runs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a scenario config without running it.
    Validate {
        /// Scenario config file.
        config: PathBuf,
    },
    /// Trace a frozen correction's residual under transmit-mixer drift.
    Drift {
        /// Scenario config file with `kind = drift`.
        config: PathBuf,
    },
    /// Calibrate a downconverter blindly from its own sideband statistics.
    CalDown {
        /// Scenario config file with `kind = cal-down`.
        config: PathBuf,
    },
    /// Calibrate an upconverter with the alternating secant search.
    CalUp {
        /// Scenario config file with `kind = cal-up`.
        config: PathBuf,
    },
    /// Calibrate both mixers jointly through a simulated RF chain.
    CalJoint {
        /// Scenario config file with `kind = cal-joint`.
        config: PathBuf,
    },
    /// Run several scenario configs, fanned across worker threads.
    Batch {
        /// Scenario config files, each writing its own trace.
        configs: Vec<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Validate { config } => {
            let cfg = load(&config)?;
            println!(
                "ok: `{}` is a valid {} scenario writing {} to {}",
                config.display(),
                cfg.kind.label(),
                cfg.format.label(),
                cfg.output.display()
            );
            Ok(())
        }
        Cmd::Drift { config } => run_one(&config, Some(Kind::Drift)),
        Cmd::CalDown { config } => run_one(&config, Some(Kind::CalDown)),
        Cmd::CalUp { config } => run_one(&config, Some(Kind::CalUp)),
        Cmd::CalJoint { config } => run_one(&config, Some(Kind::CalJoint)),
        Cmd::Batch { configs, workers } => run_batch(configs, workers),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    config::load(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Classifies a simulation error: violated in-run assumptions get their own
/// exit code so batch drivers can tell a broken model from a broken machine.
fn classify(err: &iqcal::Error) -> u8 {
    use iqcal::Error::*;
    match err {
        AllFramesRejected
        | OutOfModel(_)
        | DegenerateFrame(_)
        | DegenerateSecant(_)
        | DegenerateMixer { .. }
        | InvalidPowers { .. } => EXIT_ASSUMPTION,
        _ => EXIT_RUNTIME,
    }
}

fn run_one(path: &Path, expect: Option<Kind>) -> Result<(), Failure> {
    let cfg = load(path)?;
    if let Some(kind) = expect {
        if cfg.kind != kind {
            return Err(Failure::config(format!(
                "{}: config kind `{}` does not match the `{}` subcommand",
                path.display(),
                cfg.kind.label(),
                kind.label()
            )));
        }
    }
    let table = run::execute(&cfg).map_err(|e| Failure {
        code: classify(&e),
        message: format!("{}: {e}", path.display()),
    })?;
    let text = match cfg.format {
        TraceFormat::Csv => trace::to_csv(&cfg.resolved, &table),
        TraceFormat::Jsonl => trace::to_jsonl(&cfg.resolved, &table),
    };
    trace::write_file(&cfg.output, &text).map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: format!("cannot write {}: {e}", cfg.output.display()),
    })?;
    println!(
        "{}: wrote {} rows to {}",
        cfg.kind.label(),
        table.rows.len(),
        cfg.output.display()
    );
    Ok(())
}

/// Runs each config on a worker pool; every scenario is seeded and writes
/// its own file, so execution order cannot change any output. Exits with
/// the most severe per-scenario code.
fn run_batch(configs: Vec<PathBuf>, workers: Option<usize>) -> Result<(), Failure> {
    if configs.is_empty() {
        return Err(Failure::config("batch needs at least one config file"));
    }
    let workers = workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(usize::from)
                .unwrap_or(1)
        })
        .clamp(1, configs.len());
    let queue: Mutex<VecDeque<(usize, PathBuf)>> =
        Mutex::new(configs.iter().cloned().enumerate().collect());
    let results: Mutex<Vec<(usize, Result<(), Failure>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((idx, path)) = job else { break };
                let outcome = run_one(&path, None);
                results.lock().expect("results lock").push((idx, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("all workers joined");
    results.sort_by_key(|(idx, _)| *idx);
    let mut worst = 0u8;
    for (_, outcome) in results {
        if let Err(failure) = outcome {
            eprintln!("error: {}", failure.message);
            worst = worst.max(failure.code);
        }
    }
    if worst > 0 {
        Err(Failure {
            code: worst,
            message: "one or more batch scenarios failed".to_string(),
        })
    } else {
        Ok(())
    }
}
