//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "adareg",
    version,
    about = "Regularized frequency-domain waveform inversion with proximal Newton methods"
)]
pub struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Solve the l1-regularized two-parameter Rosenbrock problem.
    Rosenbrock(RosenbrockArgs),
    /// Write a homogeneous or inclusion model grid.
    ModelGen(ModelGenArgs),
    /// Write a surface-source, boundary-receiver acquisition file.
    Geometry(GeometryArgs),
    /// Model frequency-domain data, optionally with noise.
    Forward(ForwardArgs),
    /// Run an inversion described by a run configuration file.
    Invert(InvertArgs),
    /// Apply a denoiser to a grid file.
    Denoise(DenoiseArgs),
    /// Print RMSE between grids and/or SNR of data against noise.
    Metrics(MetricsArgs),
    /// Render a grid as an 8-bit binary PGM image.
    Preview(PreviewArgs),
    /// Check the output hashes recorded in a manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nista,
    Nadmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HessianArg {
    Exact,
    Lbfgs,
    Identity,
}

#[derive(Debug, Args)]
pub struct RosenbrockArgs {
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "nadmm")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "exact")]
    pub hessian: HessianArg,
    /// Iteration history as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Starting point `m1,m2`.
    #[arg(long, default_value = "-1.2,1", allow_hyphen_values = true)]
    pub start: String,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Inner iterations of the NISTA direction.
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// Fixed step parameter c instead of the default rule.
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Homogeneous,
    Square,
    Disk,
    Ring,
    Cross,
    AllFour,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Velocity,
    SquaredSlowness,
}

#[derive(Debug, Args)]
pub struct ModelGenArgs {
    #[arg(long, value_enum, default_value = "all-four")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 81)]
    pub nz: usize,
    #[arg(long, default_value_t = 81)]
    pub nx: usize,
    #[arg(long, default_value_t = 25.0)]
    pub dz: f64,
    #[arg(long, default_value_t = 25.0)]
    pub dx: f64,
    /// Background velocity (m/s).
    #[arg(long, default_value_t = 2000.0)]
    pub vb: f64,
    /// Inclusion velocity (m/s).
    #[arg(long, default_value_t = 2500.0)]
    pub vi: f64,
    #[arg(long, value_enum, default_value = "velocity")]
    pub kind: KindArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 81)]
    pub nz: usize,
    #[arg(long, default_value_t = 81)]
    pub nx: usize,
    #[arg(long, default_value_t = 25.0)]
    pub dz: f64,
    #[arg(long, default_value_t = 25.0)]
    pub dx: f64,
    #[arg(long, default_value_t = 5)]
    pub sources: usize,
    /// Source spacing (m).
    #[arg(long, default_value_t = 400.0)]
    pub source_spacing: f64,
    /// Receiver spacing (m).
    #[arg(long, default_value_t = 50.0)]
    pub receiver_spacing: f64,
    /// Comma-separated frequencies (Hz).
    #[arg(long, default_value = "5,7,10,12.5")]
    pub frequencies: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WaveArgs {
    #[arg(long, default_value_t = 10)]
    pub pml_cells: usize,
    #[arg(long)]
    pub free_surface: bool,
    /// Target normal-incidence PML reflection.
    #[arg(long, default_value_t = 1e-3)]
    pub pml_reflection: f64,
    /// Ricker peak frequency (Hz).
    #[arg(long, default_value_t = 10.0)]
    pub f_peak: f64,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub geometry: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add complex Gaussian noise at this SNR (dB).
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the added noise.
    #[arg(long)]
    pub noise_out: Option<PathBuf>,
    #[command(flatten)]
    pub wave: WaveArgs,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    pub config: PathBuf,
    /// Override a configuration entry (`key=value`, repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Identity,
    L1,
    L2sq,
    Tv2d,
    Nlm,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "identity")]
    pub kind: DenoiserArg,
    /// Prox weight passed to the denoiser.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// TV weight multiplying the scale.
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    /// TV inner iterations.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Reference grid of the l2sq prox (zero when omitted).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub patch: usize,
    #[arg(long, default_value_t = 3)]
    pub search: usize,
    /// NLM bandwidth (multiplied by the scale).
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    /// NLM noise level.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Estimated model.
    #[arg(long, requires = "truth")]
    pub model: Option<PathBuf>,
    /// Reference model.
    #[arg(long, requires = "model")]
    pub truth: Option<PathBuf>,
    /// Signal data file.
    #[arg(long, requires = "noise")]
    pub data: Option<PathBuf>,
    /// Noise data file.
    #[arg(long, requires = "data")]
    pub noise: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Velocity mapped to black (default: grid minimum).
    #[arg(long)]
    pub vmin: Option<f64>,
    /// Velocity mapped to white (default: grid maximum).
    #[arg(long)]
    pub vmax: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub manifest: PathBuf,
    /// Re-execute the recorded command first.
    #[arg(long)]
    pub rerun: bool,
}
