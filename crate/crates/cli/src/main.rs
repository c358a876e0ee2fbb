mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use quench_core::dataset::timestamp_now;

use crate::args::{Cli, Command, RerunArgs};
use crate::commands::{Context, Outcome};
use crate::error::{CliError, CliResult};
use crate::manifest::{content_hash, RunManifest, TOOL};

fn record(command: &Command, ctx: &Context, outcome: &Outcome, seconds: f64) -> CliResult<()> {
    let Some(out) = &outcome.out else { return Ok(()) };
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        config: outcome.config.clone(),
        seed: outcome.seed,
        workers: ctx.workers,
        timestamp: ctx.timestamp,
        inputs: outcome.inputs.clone(),
        outputs: outcome.outputs.clone(),
        wall_clock_secs: seconds,
    };
    let path = manifest.write(out)?;
    log::info!("manifest: {}", path.display());
    Ok(())
}

fn rerun(args: &RerunArgs, workers: usize) -> CliResult<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest was written by version {}", manifest.version);
    }
    for input in &manifest.inputs {
        match content_hash(&input.path, &input.volatile) {
            Ok(hash) if hash == input.sha256 => {}
            _ => log::warn!("input {} changed since the recorded run", input.path.display()),
        }
    }
    let ctx = Context {
        workers: if workers == 0 { manifest.workers } else { workers },
        timestamp: manifest.timestamp,
        config: manifest.config.clone(),
        force: true,
    };
    let outcome = commands::run(&manifest.command, &ctx)?;
    if let Some(e) = outcome.deferred {
        log::warn!("{e}");
    }
    let mut differing = Vec::new();
    for recorded in &manifest.outputs {
        let hash = content_hash(&recorded.path, &recorded.volatile)?;
        if hash == recorded.sha256 {
            println!("identical {}", recorded.path.display());
        } else {
            println!("DIFFERS   {}", recorded.path.display());
            differing.push(recorded.path.display().to_string());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::NotReproduced(differing.join(", ")));
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Command::Rerun(args) = &cli.command {
        return rerun(args, cli.workers);
    }
    let ctx = Context { workers: cli.workers, timestamp: timestamp_now(), config: None, force: false };
    let start = Instant::now();
    let outcome = commands::run(&cli.command, &ctx)?;
    record(&cli.command, &ctx, &outcome, start.elapsed().as_secs_f64())?;
    match outcome.deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let report = serde_json::json!({ "error": e.kind(), "exit_code": code, "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(code as u8)
        }
    }
}
