//! `orbitlab <command> --config <path> --out <dir>`
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure. Every
//! failure writes `error.json` into the output directory when possible.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod failure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Output;
use config::RunConfig;
use failure::Failure;

const SCHEMA: &str = include_str!("../config.schema.json");

#[derive(Parser)]
#[command(
    name = "orbitlab",
    version,
    about = "Periodic orbits of reversible Lagrangian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the equations of motion and write a trajectory CSV.
    Integrate(RunArgs),
    /// Search brake orbits from rest-point seeds.
    FindBrake(RunArgs),
    /// Search a rotation through a return section.
    FindRotation(RunArgs),
    /// Monodromy spectra of the configured orbits.
    Monodromy(RunArgs),
    /// Self- and mutual intersections of the configured orbits.
    Intersections(RunArgs),
    /// Compare Jacobi-metric geodesics with Lagrangian orbits.
    JacobiCheck(RunArgs),
    /// Build a conformal perturbation that removes a crossing.
    Perturb(RunArgs),
    /// Brake orbits, spectra and double points of a harmonic oscillator.
    OscillatorReport(RunArgs),
    /// Print the JSON schema of the configuration file.
    Schema,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

type Runner = fn(&RunConfig, &Output) -> Result<(), Failure>;

fn run(args: &RunArgs, runner: Runner) -> Result<(), Failure> {
    let out = Output::create(&args.out)?;
    let result = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))
        .and_then(|text| RunConfig::load(&text))
        .and_then(|cfg| runner(&cfg, &out));
    if let Err(failure) = &result {
        // Best effort: the primary report is the exit code and stderr.
        let _ = out.json("error.json", &failure.artifact());
    }
    result
}

fn report(out_dir: &Path, failure: &Failure) -> ExitCode {
    eprintln!("orbitlab: {failure} (output: {})", out_dir.display());
    ExitCode::from(failure.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, runner): (&RunArgs, Runner) = match &cli.command {
        Command::Integrate(a) => (a, commands::integrate),
        Command::FindBrake(a) => (a, commands::find_brake_cmd),
        Command::FindRotation(a) => (a, commands::find_rotation_cmd),
        Command::Monodromy(a) => (a, commands::monodromy),
        Command::Intersections(a) => (a, commands::intersections),
        Command::JacobiCheck(a) => (a, commands::jacobi_check),
        Command::Perturb(a) => (a, commands::perturb),
        Command::OscillatorReport(a) => (a, commands::oscillator_report),
        Command::Schema => {
            print!("{SCHEMA}");
            return ExitCode::SUCCESS;
        }
    };
    match run(args, runner) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => report(&args.out, &failure),
    }
}
