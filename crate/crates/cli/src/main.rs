//! `etsynth`: scenario validation, abstraction, Pareto synthesis, simulation
//! and reporting from the command line.

mod args;
mod commands;
mod manifest;
mod report;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_CONVERGENCE: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<etsynth::Error>() {
            return match e {
                etsynth::Error::Io { .. } => EXIT_IO,
                etsynth::Error::Infeasible { .. } => EXIT_INFEASIBLE,
                etsynth::Error::Convergence { .. } | etsynth::Error::Calibration { .. } => EXIT_CONVERGENCE,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Validate { scenario } => commands::validate(&scenario),
        Command::Abstract(a) => commands::abstract_cmd(&a, argv),
        Command::Pareto(a) => commands::pareto(&a, argv),
        Command::Synth(a) => commands::synth(&a, argv),
        Command::Simulate(a) => commands::simulate(&a, argv),
        Command::Baseline(a) => commands::baseline(&a, argv),
        Command::Report { run_dir } => {
            print!("{}", report::report(&run_dir)?);
            Ok(())
        }
        Command::ExportPrism { abstraction, out } => commands::export(&abstraction, &out),
        Command::Probe(a) => commands::probe(&a, argv),
        Command::Rerun { manifest } => rerun(&manifest),
    }
}

fn rerun(path: &Path) -> Result<()> {
    let manifest = manifest::RunManifest::read(path)?;
    std::env::set_current_dir(&manifest.working_dir)
        .with_context(|| format!("entering {}", manifest.working_dir.display()))?;
    let full = std::iter::once("etsynth".to_string()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(full).map_err(|e| etsynth::Error::Input(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(etsynth::Error::Input("a manifest cannot record a rerun".into()).into());
    }
    run(cli, &manifest.argv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
