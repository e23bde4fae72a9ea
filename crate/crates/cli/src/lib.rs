//! `panosphere` command dispatcher.
//!
//! Every command prints a JSON report on stdout. Exit codes: 0 success,
//! 1 domain or I/O error (or a failed gradient check), 2 usage error.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "panosphere", version, about = "Panoramic geometry, curation and depth evaluation toolkit")]
pub struct Cli {
    /// Log filter (error, warn, info, debug); overrides RUST_LOG.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warp a perspective RGB and/or depth image onto an equirectangular grid.
    Project(ProjectArgs),
    /// Curate configured datasets into panoramas and a JSON-lines manifest.
    Curate(CurateArgs),
    /// Build the spherical embedding and report (or dump) it.
    Embed(EmbedArgs),
    /// Run the toy model on a panorama and write the predicted distance.
    Forward(ForwardArgs),
    /// Compare analytic and finite-difference gradients of the toy model.
    Gradcheck(GradcheckArgs),
    /// Evaluate predictions listed in a JSON-lines manifest.
    Eval(EvalArgs),
    /// Lift a distance panorama to a point cloud (PLY).
    Reconstruct(ReconstructArgs),
    /// Merge PLY clouds after per-cloud translations.
    Compose(ComposeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthKind {
    /// Planar z-depth, converted to radial distance.
    Z,
    /// Already radial distance.
    Radial,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Perspective RGB image (PSR1 or 8-bit PNG).
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    /// Perspective depth raster (PSR1, kind distance).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// How the depth raster is encoded.
    #[arg(long, value_enum, default_value = "z")]
    pub depth_kind: DepthKind,
    /// Horizontal field of view, degrees.
    #[arg(long)]
    pub xfov: f64,
    /// Vertical field of view, degrees (default: xfov · H / W).
    #[arg(long)]
    pub yfov: Option<f64>,
    /// Azimuth offset of the optical center, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub azimuth: f64,
    /// Polar offset of the optical center, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub polar: f64,
    /// Output ERP width.
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Output ERP height.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Output directory for rgb.psr, distance.psr and mask.psr.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// JSON curation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (capped by PANOSPHERE_THREADS).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Outpainting command with {in}, {mask} and {out} placeholders.
    #[arg(long)]
    pub outpaint_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Patch rows H'.
    #[arg(long)]
    pub h_patches: usize,
    /// Patch columns W'.
    #[arg(long)]
    pub w_patches: usize,
    /// Embedding width D (multiple of 4).
    #[arg(long)]
    pub dim: usize,
    /// Dump the embedding as a PSR1 raster (W'×H', D channels).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Model configuration from a `key = value` file plus overrides.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parameter initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    /// Input panorama (PSR1 RGB or PNG).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output distance raster.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckLoss {
    /// Median-aligned λ_dis·L_dis + λ_nor·L_nor on a synthetic room.
    Full,
    /// ½‖output‖².
    Quadratic,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Relative error tolerance per parameter group.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub loss: CheckLoss,
    /// Distance-loss weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_dis: f64,
    /// Normal-loss weight.
    #[arg(long, default_value_t = 2.0)]
    pub lambda_nor: f64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    None,
    Median,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    /// Mean of per-image metrics.
    Image,
    /// Pool all valid pixels.
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RmseArg {
    /// sqrt(mean Δ²).
    Conventional,
    /// sqrt(Σ Δ²) / |Ω|.
    Printed,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON lines with pred_path, gt_path, optional mask_path and dataset.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "median")]
    pub align: AlignArg,
    #[arg(long, value_enum, default_value = "image")]
    pub aggregate: AggregateArg,
    #[arg(long, value_enum, default_value = "conventional")]
    pub rmse: RmseArg,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the text table here (it always goes to stderr).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Distance panorama (PSR1, kind distance).
    #[arg(long)]
    pub distance: PathBuf,
    /// Colors (PSR1 RGB or PNG) on the same grid.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    /// Validity mask (PSR1, kind mask).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Keep every n-th pixel along both axes.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Attach surface normals computed from the distance map.
    #[arg(long)]
    pub normals: bool,
    /// Write binary little-endian PLY instead of ASCII.
    #[arg(long)]
    pub binary: bool,
    /// Output PLY path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// JSON list of {"cloud_path": ..., "translation": [x, y, z]}.
    #[arg(long)]
    pub scene: PathBuf,
    /// Write binary little-endian PLY instead of ASCII.
    #[arg(long)]
    pub binary: bool,
    /// Output PLY path.
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(filter: Option<&str>) {
    let env = env_logger::Env::default().default_filter_or("info");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(f) = filter {
        builder.parse_filters(f);
    }
    builder.format_timestamp(None).target(env_logger::Target::Stderr);
    // a second initialization (tests run many commands) is harmless
    let _ = builder.try_init();
}

/// Parses `argv` (including the program name), runs the command and writes
/// its JSON report to `out`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log.as_deref());
    match commands::execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary: reports go to stdout.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(argv, &mut lock)
}
