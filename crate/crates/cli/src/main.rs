//! `odecausal`: generate datasets, train neural fields, extract causal
//! graphs, simulate interventions and run metric sweeps.
//!
//! Every command writes `manifest.json` into its output directory, on
//! success and on handled failure. Exit codes: 0 ok, 2 usage, 3 numeric
//! failure, 4 I/O.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use manifest::Run;

#[derive(Parser)]
#[command(name = "odecausal", version, about = "Causal structure from ODE trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemKind {
    Linear,
    Spiral,
    Lv,
    Transcription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Linear,
    Jacobian,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset bundle (trajectory, clean trajectory, truth graph, specs).
    Generate {
        #[arg(value_enum)]
        system: SystemKind,
        /// JSON with `spec` (system spec) and `corruption` objects; a manifest also works.
        #[arg(long, alias = "spec")]
        config: Option<PathBuf>,
        /// Number of variables (linear systems).
        #[arg(long)]
        n: Option<usize>,
        /// Edge density (linear systems).
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        irr: Option<f64>,
        /// Seeds the system draw and the corruption.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/generate")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Train a neural field on a dataset bundle or trajectory CSV.
    Train {
        dataset: PathBuf,
        /// JSON with `architecture` and `train` objects; a manifest also works.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Hidden layer widths, e.g. `20,20`.
        #[arg(long, value_delimiter = ',')]
        arch: Option<Vec<usize>>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = ["1", "2"])]
        order: Option<String>,
        #[arg(long, value_parser = ["linear", "tanh", "elu"])]
        activation: Option<String>,
        #[arg(long, value_parser = ["identity", "cubic"])]
        features: Option<String>,
        /// Train on raw instead of [0, 1]-normalized data.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Extract the causal graph of a checkpoint and score it against the truth.
    Infer {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_parser = ["mean", "sum"])]
        aggregation: Option<String>,
        #[arg(long, default_value = "runs/infer")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Simulate clamps and coefficient edits on a learned and/or true system.
    Intervene {
        /// Intervention JSON: {clamps: [{index, value}], edits: [{row, col, multiplier | set_to}], horizon: {t_end, points}}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset bundle directory, `system.json`, or a bare system spec.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Initial positions; defaults to the system's.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value = "runs/intervene")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Metric table over dims × sigmas × irrs, averaged over seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        irrs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        seeds: Option<Vec<u64>>,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Two different linear systems with one trajectory.
    DemoUnidentifiability {
        #[arg(long, default_value = "runs/unidentifiability")]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<odecausal::Error> for CliError {
    fn from(e: odecausal::Error) -> Self {
        use odecausal::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) => CliError::Io(msg),
            E::IntegrationFailure { .. } | E::MaxSteps { .. } | E::TrainingDiverged { .. } | E::Generation(_) => {
                CliError::Numeric(msg)
            }
            E::Argument(_) | E::UnsupportedMode(_) | E::StaleTape(_) | E::Parse(_) | E::Json(_) => CliError::Usage(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Generate { out, .. } => ("generate", out),
        Command::Train { out, .. } => ("train", out),
        Command::Infer { out, .. } => ("infer", out),
        Command::Intervene { out, .. } => ("intervene", out),
        Command::Sweep { out, .. } => ("sweep", out),
        Command::DemoUnidentifiability { out } => ("demo-unidentifiability", out),
    };
    let mut run = Run::start(name, out.clone());
    let result = dispatch(cli.command, &mut run);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if let Err(e) = run.finish(result.err().map(|e| e.to_string()), code) {
        eprintln!("error: could not write manifest: {e}");
        return ExitCode::from(4);
    }
    ExitCode::from(code)
}

fn dispatch(command: Command, run: &mut Run) -> Result<(), CliError> {
    match command {
        Command::Generate { system, config, n, density, sigma, irr, seed, plot, .. } => {
            commands::generate(run, commands::GenerateArgs { system, config, n, density, sigma, irr, seed, plot })
        }
        Command::Train { dataset, config, arch, lambda, lr, epochs, order, activation, features, raw, seed, plot, .. } => {
            commands::train(
                run,
                commands::TrainArgs { dataset, config, arch, lambda, lr, epochs, order, activation, features, raw, seed, plot },
            )
        }
        Command::Infer { checkpoint, dataset, config, epsilon, mode, aggregation, plot, .. } => {
            commands::infer(run, commands::InferArgs { checkpoint, dataset, config, epsilon, mode, aggregation, plot })
        }
        Command::Intervene { spec, checkpoint, system, x0, plot, .. } => {
            commands::intervene(run, commands::InterveneArgs { spec, checkpoint, system, x0, plot })
        }
        Command::Sweep { config, dims, sigmas, irrs, seeds, workers, epochs, lambda, lr, .. } => {
            commands::sweep(run, commands::SweepArgs { config, dims, sigmas, irrs, seeds, workers, epochs, lambda, lr })
        }
        Command::DemoUnidentifiability { .. } => commands::demo_unidentifiability(run),
    }
}
