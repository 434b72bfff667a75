//! Command-line driver and local HTTP frame service.

pub mod commands;
pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LAYERED_DR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "layered-dr", version, about = "Layered diminished-reality views from two RGBD cameras")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse, synthesize and segment every frame of a manifest and write its layers.
    Synthesize(SynthesizeArgs),
    /// Blend one frame's layers into a single image.
    Compose(ComposeArgs),
    /// Run the synthetic benchmark suite.
    Bench(BenchArgs),
    /// Serve a layers directory over HTTP.
    Serve(ServeArgs),
    /// Render a benchmark sequence to disk in the manifest format.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Voxels per axis: one number for a cube or `nx,ny,nz`.
    #[arg(long, value_parser = parse_dims)]
    pub grid_dims: Option<[usize; 3]>,
    /// Voxel edge length in meters.
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Grid center `x,y,z` in meters.
    #[arg(long, value_parser = parse_vec3)]
    pub grid_center: Option<[f64; 3]>,
    /// Truncation distance in meters.
    #[arg(long)]
    pub delta_trunc: Option<f64>,
    /// Visibility tolerance in meters.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Segmentation margin in meters.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub opening_radius: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub manifest: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Also write each frame's fused grid.
    #[arg(long)]
    pub dump_grid: bool,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Directory holding `layers.json`.
    pub layers: PathBuf,
    #[arg(long)]
    pub frame: usize,
    /// Named blend preset.
    #[arg(long, conflicts_with = "weights")]
    pub preset: Option<String>,
    /// ALPHA BETA GAMMA DELTA
    #[arg(num_args = 4, value_names = ["ALPHA", "BETA", "GAMMA", "DELTA"], allow_negative_numbers = true)]
    pub weights: Vec<f64>,
    /// Output image; `.png` writes PNG, anything else PPM.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated sequence ids; all six when omitted.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<usize>,
    #[arg(long, value_enum, default_value = "on")]
    pub noise: Toggle,
    /// Cap on live frames per sequence.
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long, default_value = "bench-report.json")]
    pub report: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub layers: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Benchmark sequence id (1 to 6).
    pub sequence: usize,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    pub noise: Toggle,
    /// Number of occluder-free initialization frames.
    #[arg(long)]
    pub init_frames: Option<usize>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err("expected N or NX,NY,NZ".into()),
    }
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts.try_into().map_err(|_| "expected X,Y,Z".to_string())
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments; exit code 2.
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    Runtime(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<layered_dr::Error> for CliError {
    fn from(e: layered_dr::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Sizes the global worker pool from `LAYERED_DR_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synthesize(a) => commands::synthesize(&a).map(|_| ()),
        Command::Compose(a) => commands::compose(&a),
        Command::Bench(a) => commands::bench(&a).map(|_| ()),
        Command::Serve(a) => commands::serve(&a),
        Command::Export(a) => commands::export(&a).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_vectors() {
        assert_eq!(parse_dims("128"), Ok([128; 3]));
        assert_eq!(parse_dims("4,5,6"), Ok([4, 5, 6]));
        assert!(parse_dims("4,5").is_err());
        assert_eq!(parse_vec3("0,0.5,-1"), Ok([0.0, 0.5, -1.0]));
        assert!(parse_vec3("x,1,2").is_err());
    }

    #[test]
    fn compose_takes_four_weights_or_a_preset() {
        let cli = Cli::try_parse_from(["layered-dr", "compose", "d", "--frame", "0", "-o", "x.ppm", "0.4", "0.6", "0", "0"])
            .unwrap();
        let Command::Compose(a) = cli.command else { panic!() };
        assert_eq!(a.weights, vec![0.4, 0.6, 0.0, 0.0]);
        assert!(Cli::try_parse_from(["layered-dr", "compose", "d", "--frame", "0", "-o", "x", "1", "0"]).is_err());
        assert!(Cli::try_parse_from([
            "layered-dr", "compose", "d", "--frame", "0", "-o", "x", "--preset", "background", "1", "0", "0", "0"
        ])
        .is_err());
    }

    #[test]
    fn bench_flags() {
        let cli = Cli::try_parse_from(["layered-dr", "bench", "--sequences", "3,4", "--noise", "off"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!() };
        assert_eq!(a.sequences, vec![3, 4]);
        assert_eq!(a.noise, Toggle::Off);
    }
}
