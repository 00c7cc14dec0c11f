//! Command-line driver: simulate spectra, pick peaks, run frequency fits,
//! refine line shapes and estimate error bars.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use nafons::{Mode, NafonsConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    /// The fit did not converge, or fewer peaks than requested were found.
    pub const INCOMPLETE: u8 = 2;
}

#[derive(Debug, Parser)]
#[command(
    name = "nafons",
    version,
    about = "Assignment-free fitting of dipolar-coupled NMR spectra"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stick spectrum (and optionally a sampled trace) for one experiment.
    Simulate(SimulateArgs),
    /// Peak list from a sampled spectrum.
    Pick(PickArgs),
    /// Frequency fit of a problem file.
    Fit(FitArgs),
    /// Joint fit of heteronuclear couplings from eigenpair-prepared subspectra.
    FitJoint(FitJointArgs),
    /// Line-shape refinement; appends a [refine] section to a report.
    Refine(RefineArgs),
    /// Monte-Carlo error bars; appends an [errors] section to a report.
    Errors(ErrorsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub observe: String,
    /// Restrict to the observed species (broadband decoupling).
    #[arg(long)]
    pub decouple: bool,
    /// `thermal` or `eig:I,J[@SPECIES]`.
    #[arg(long, default_value = "thermal")]
    pub prep: String,
    /// Output stem: writes `<out>.sticks`, plus `<out>.spec` when `--t2` is given.
    #[arg(long)]
    pub out: PathBuf,
    /// T2* per spin (ms), comma separated, in system order.
    #[arg(long, value_delimiter = ',')]
    pub t2: Option<Vec<f64>>,
    /// `START,STOP,POINTS`; defaults to the line range ±200 Hz at 0.5 Hz spacing.
    #[arg(long, value_delimiter = ',')]
    pub axis: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PickArgs {
    #[arg(long)]
    pub spectrum: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub min_prominence: f64,
    #[arg(long)]
    pub window_pts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitFlags {
    /// Replace every bound with `±BOUNDS` Hz.
    #[arg(long)]
    pub bounds: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub loops: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p_zero: f64,
    /// Generated from the clock and recorded in the manifest when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value = "loop")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// Restart jitter as a fraction of each bound's half-width.
    #[arg(long, default_value_t = 1.0)]
    pub jitter: f64,
    /// Symmetry images refined per improvement (0 disables).
    #[arg(long, default_value_t = 64)]
    pub symmetry_trials: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Wall-clock limit in seconds for the whole run.
    #[arg(long)]
    pub max_wall_time: Option<f64>,
    #[arg(long)]
    pub stop_when_converged: bool,
}

impl FitFlags {
    pub fn to_config(&self, seed: u64) -> NafonsConfig {
        NafonsConfig {
            loops: self.loops,
            p_zero: self.p_zero,
            seed,
            tol_hz: self.tol,
            max_wall_time: self.max_wall_time.map(Duration::from_secs_f64),
            restarts: self.restarts,
            mode: self.mode,
            jitter_frac: self.jitter,
            symmetry_trials: self.symmetry_trials,
            workers: self.workers,
            stop_when_converged: self.stop_when_converged,
            ..NafonsConfig::default()
        }
    }

    /// Settings that determine the result, for the manifest's config digest.
    pub fn settings(&self, seed: u64) -> Vec<(&'static str, String)> {
        vec![
            ("bounds", format!("{:?}", self.bounds)),
            ("loops", self.loops.to_string()),
            ("p_zero", self.p_zero.to_string()),
            ("seed", seed.to_string()),
            ("restarts", self.restarts.to_string()),
            ("mode", self.mode.to_string()),
            ("tol", self.tol.to_string()),
            ("jitter", self.jitter.to_string()),
            ("symmetry_trials", self.symmetry_trials.to_string()),
            ("max_wall_time", format!("{:?}", self.max_wall_time)),
            ("stop_when_converged", self.stop_when_converged.to_string()),
        ]
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub flags: FitFlags,
}

#[derive(Debug, Args)]
pub struct FitJointArgs {
    /// Spin system with the known parameters.
    #[arg(long)]
    pub system: PathBuf,
    /// Species whose eigenpairs were prepared.
    #[arg(long, default_value = "1H")]
    pub species: String,
    /// `PEAKS_FILE:I,J`, repeated once per subspectrum.
    #[arg(long = "sub", required = true)]
    pub subs: Vec<String>,
    #[arg(long, default_value_t = 50.0)]
    pub shift_window: f64,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the assembled problem file (usable with `errors`).
    #[arg(long)]
    pub save_problem: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Report whose [parameters] override the system values.
    #[arg(long)]
    pub report: PathBuf,
    /// `"PATH OBSERVE decoupled|coupled PREP"`, repeated per spectrum.
    #[arg(long = "spectrum", required = true)]
    pub spectra: Vec<String>,
    /// Starting T2* per spin (ms), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub t2: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub window_frac: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Writes `<prefix>.<k>.dat` with `freq exp sim` columns per spectrum.
    #[arg(long)]
    pub plot_prefix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ErrorsArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Gaussian frequency noise (Hz).
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<u8> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Pick(a) => commands::pick(&a),
        Command::Fit(a) => commands::fit(&a, argv),
        Command::FitJoint(a) => commands::fit_joint(&a, argv),
        Command::Refine(a) => commands::refine(&a, argv),
        Command::Errors(a) => commands::errors(&a, argv),
    }
}
