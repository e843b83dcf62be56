//! `tqnf`: batch front end. Reads a TOML config, runs one command and writes reports.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure, 1 I/O failure. Every
//! failure writes `error.json` into the output directory.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, ValueEnum};
use serde_json::json;

use config::Config;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Diophantine,
    Qnf,
    Kam,
    Spectrum,
    Verify,
    Egorov,
    Constants,
}

#[derive(Debug, Parser)]
#[command(name = "tqnf", version, about = "Quantum normal forms for perturbed linear flows on the torus")]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Command to run.
    #[arg(long, value_enum)]
    command: Command,
    /// Sampling seed for property checks; never affects the numerics of a config.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Why a run failed.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Core(tqnf::Error),
    Io(anyhow::Error),
}

impl From<tqnf::Error> for Failure {
    fn from(e: tqnf::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Core(e) if e.is_validation() => 2,
            Failure::Core(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn record(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            Failure::Validation(msg) => json!({ "kind": "Validation", "message": msg, "exit_code": code }),
            Failure::Io(e) => json!({ "kind": "Io", "message": format!("{e:#}"), "exit_code": code }),
            Failure::Core(e) => {
                let mut rec = json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": code });
                match e {
                    tqnf::Error::ResonantFrequency { worst_q } => rec["worst_q"] = json!(worst_q),
                    tqnf::Error::ResonantMode { q } => rec["q"] = json!(q),
                    tqnf::Error::UncertifiedMode { q, q_max } => {
                        rec["q"] = json!(q);
                        rec["q_max"] = json!(q_max);
                    }
                    tqnf::Error::ThetaTooLarge { ell, theta } => {
                        rec["ell"] = json!(ell);
                        rec["theta"] = json!(theta);
                    }
                    tqnf::Error::StepConditionViolated { ell, value } => {
                        rec["ell"] = json!(ell);
                        rec["value"] = json!(value);
                    }
                    _ => {}
                }
                rec
            }
        }
    }
}

fn load_config(path: &Path) -> Result<Config, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    Config::from_toml(&text).map_err(Failure::Validation)
}

fn run(args: &Args) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    commands::write_json(&args.out, "config.resolved.json", &json!(cfg))?;
    commands::dispatch(args.command, &cfg, &args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let rec = f.record();
            eprintln!("error: {}", rec["message"].as_str().unwrap_or_default());
            if let Err(e) = commands::write_json(&args.out, "error.json", &rec) {
                eprintln!("error: {e:#?}");
            }
            ExitCode::from(f.exit_code())
        }
    }
}
