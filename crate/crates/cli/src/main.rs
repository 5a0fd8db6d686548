mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Failure;

/// Harmonic dimension counting and verification for divergence-form operators.
#[derive(Parser, Debug)]
#[command(name = "lharmonic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dimension table h_0..h_d with exact and estimated columns.
    Dims(DimsArgs),
    /// Run one verification suite and write its margin table.
    Verify {
        #[command(subcommand)]
        which: Verify,
    },
    /// Low boundary eigenvalues of the weighted circle operator.
    Spectrum(SpectrumArgs),
    /// Ellipticity bounds λ_r, Λ_r over a radius grid.
    Profile(ProfileArgs),
    /// Finite-element Dirichlet solve on a disk.
    Solve(SolveArgs),
}

#[derive(Subcommand, Debug)]
enum Verify {
    /// Boundary-energy inequality for a degree-d solution basis.
    Lemma1(Lemma1Args),
    /// Lower bound on boundary eigenvalues outside B(r0).
    Eigen28(Eigen28Args),
    /// Slope of the log-determinant of the Gram matrix.
    Growth21(Growth21Args),
    /// Radially integrated eigenvalue inequality.
    Integrated(IntegratedArgs),
    /// Dimension sum bounds and rearrangement chain.
    Theorem2(Theorem2Args),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Field specification (JSON); bare names are also looked up in the shipped fields directory.
    #[arg(long)]
    pub field: PathBuf,
    /// Directory for CSV and JSON artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct Mollify {
    /// Mollification parameter for fields without boundary traces.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
}

#[derive(Args, Debug)]
pub struct DimsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d: u32,
    /// Mesh size for the estimates.
    #[arg(long)]
    pub h: Option<f64>,
    /// Outer radius of the estimation disk.
    #[arg(long)]
    pub r: Option<f64>,
    /// Also run the finite-element and spectral checks into the report.
    #[arg(long)]
    pub numerics: bool,
}

#[derive(Args, Debug)]
pub struct Lemma1Args {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mollify: Mollify,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1)]
    pub d: u32,
    /// Radius of the disk carrying the basis; defaults to max(4, 2t).
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    /// Replaces the tolerance of every row.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct Eigen28Args {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mollify: Mollify,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Inner radius of the exterior region supplying λ_r0.
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    /// Boundary grid size; defaults to max(512, 8k).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct Growth21Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2)]
    pub d: u32,
    /// Largest fitting radius.
    #[arg(long, default_value_t = 4.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    /// Number of geometric radii in [r0, r].
    #[arg(long, default_value_t = 8)]
    pub points: usize,
    /// Allowed excess of the slope over its budget; defaults to 5% of the budget.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IntegratedArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mollify: Mollify,
    #[arg(long, default_value_t = 1)]
    pub d: u32,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    /// Radius of the disk carrying the basis; defaults to max(4, 2r).
    #[arg(long)]
    pub basis_radius: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub points_per_octave: usize,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    /// Replaces the tolerance of every row.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct Theorem2Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d: u32,
    /// Growth degrees d_0 < … < d_j = d, comma separated; defaults to 0,1,…,d.
    #[arg(long, value_delimiter = ',')]
    pub partition: Option<Vec<f64>>,
    /// Skip the finite-element and spectral sub-checks.
    #[arg(long)]
    pub skip_numerics: bool,
    /// Replaces the tolerance of every row.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mollify: Mollify,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Boundary grid size; defaults to max(512, 8m).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Radius supplying λ_r0 for the margin column; defaults to min(1, t).
    #[arg(long)]
    pub r0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    /// Largest radius of the grid.
    #[arg(long, default_value_t = 8.0)]
    pub r: f64,
    /// Number of evenly spaced radii in [0, r].
    #[arg(long, default_value_t = 17)]
    pub points: usize,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Boundary data: x, y, xy, x2-y2, x3-3xy2, one.
    #[arg(long, default_value = "x")]
    pub trace: String,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.05)]
    pub h: f64,
    /// Point at which the solution is reported, as x,y.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.25, 0.0])]
    pub probe: Vec<f64>,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("LHARMONIC_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("LHARMONIC_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Dims(a) => commands::dims(&a),
        Command::Verify { which } => match which {
            Verify::Lemma1(a) => commands::lemma1(&a),
            Verify::Eigen28(a) => commands::eigen28(&a),
            Verify::Growth21(a) => commands::growth21(&a),
            Verify::Integrated(a) => commands::integrated(&a),
            Verify::Theorem2(a) => commands::theorem2(&a),
        },
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::Profile(a) => commands::profile(&a),
        Command::Solve(a) => commands::solve(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
