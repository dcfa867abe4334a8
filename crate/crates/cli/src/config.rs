//! Run configuration: the parsed command line in a serializable form.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mfland_core::DEFAULT_RANK_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Spectrum,
    Classify,
    Orbit,
    Flow,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Everything a run depends on. Identical configs give byte-identical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub x_path: PathBuf,
    pub k: Option<usize>,
    /// 1-based indices into the sorted singular values.
    pub selection: Vec<usize>,
    pub c0_path: Option<PathBuf>,
    pub w_path: Option<PathBuf>,
    pub s_path: Option<PathBuf>,
    pub group_path: Option<PathBuf>,
    pub scale: Option<f64>,
    pub balanced: bool,
    pub seed: u64,
    pub rank_tol: f64,
    pub tol: f64,
    pub t_max: f64,
    pub init_scale: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_T_MAX: f64 = 1e4;
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "mfland", version, about = "Critical points, Hessian spectra, orbits and flows of 1/2 ||X - WS||_F^2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Closed-form Hessian spectrum at a constructed critical point.
    Spectrum(CommonArgs),
    /// Global minimum or strict saddle, for a constructed or supplied critical point.
    Classify(CommonArgs),
    /// Eigenvalue bound and inertia after transport by A or by a * I.
    Orbit(CommonArgs),
    /// Gradient flow from a seeded initialization, with a diagnosis of the limit.
    Flow(CommonArgs),
    /// Full property suite on X; exits 1 if any check fails.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Data matrix X as a headerless CSV.
    #[arg(long = "x")]
    pub x: PathBuf,
    /// Number of factor columns.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated 1-based indices of the selected singular values.
    #[arg(long = "select", value_delimiter = ',')]
    pub select: Vec<usize>,
    /// C0 block as a CSV, shape (n - r) x (k - q).
    #[arg(long)]
    pub c0: Option<PathBuf>,
    /// W of a supplied critical point (classify only).
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// S of a supplied critical point (classify only).
    #[arg(long)]
    pub s: Option<PathBuf>,
    /// Group element A as a k x k CSV (orbit only).
    #[arg(long)]
    pub group: Option<PathBuf>,
    /// Scale a: full-rank scaled point for spectrum, A = a I for orbit.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Use the balanced representative (spectrum) or a balanced start (flow).
    #[arg(long)]
    pub balanced: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Relative threshold for the numerical rank of X.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Criticality and rank tolerance for reductions and flow convergence.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Flow time horizon.
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: f64,
    /// Scale of the random flow initialization.
    #[arg(long, default_value_t = DEFAULT_INIT_SCALE)]
    pub init_scale: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Trajectory CSV destination (flow only).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Self {
        let (command, a) = match cli.command {
            Sub::Spectrum(a) => (Command::Spectrum, a),
            Sub::Classify(a) => (Command::Classify, a),
            Sub::Orbit(a) => (Command::Orbit, a),
            Sub::Flow(a) => (Command::Flow, a),
            Sub::Verify(a) => (Command::Verify, a),
        };
        RunConfig {
            command,
            x_path: a.x,
            k: a.k,
            selection: a.select,
            c0_path: a.c0,
            w_path: a.w,
            s_path: a.s,
            group_path: a.group,
            scale: a.scale,
            balanced: a.balanced,
            seed: a.seed,
            rank_tol: a.rank_tol,
            tol: a.tol,
            t_max: a.t_max,
            init_scale: a.init_scale,
            format: a.format,
            output: a.output,
            trajectory: a.trajectory,
        }
    }
}
