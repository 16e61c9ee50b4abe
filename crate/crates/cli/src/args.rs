use std::path::PathBuf;

use asgfit::loss::ReconstructionNorm;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "asgfit",
    version,
    about = "Fit temporally consistent ASG mixtures to HDR environment map sequences"
)]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit a frame or a sequence of frames.
    Fit(FitArgs),
    /// Evaluate fitted parameters into a lat-long image.
    Reconstruct(ReconstructArgs),
    /// Compare fitted parameters against ground-truth frames.
    Metrics(MetricsArgs),
    /// Render a row of spheres lit by an environment or a fitted frame.
    RenderBalls(RenderBallsArgs),
    /// Stack one scanline of every frame to visualize temporal stability.
    StackRows(StackRowsArgs),
    /// Write procedural test environments.
    Synth(SynthArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    L1,
    L2,
}

impl From<LossArg> for ReconstructionNorm {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::L1 => ReconstructionNorm::L1,
            LossArg::L2 => ReconstructionNorm::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 256×512 grid, 24000 / 6000 epochs.
    Full,
    /// 64×128 grid, 2000 / 500 epochs.
    Desk,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Frame files (.hdr or .pfm); a glob, fitted in sorted order.
    #[arg(long)]
    pub input: String,
    #[arg(long, default_value_t = 15)]
    pub num_asgs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Tie λ to μ for every lobe.
    #[arg(long)]
    pub isotropic: bool,
    #[arg(long)]
    pub grid_height: Option<usize>,
    #[arg(long)]
    pub epochs_first: Option<usize>,
    #[arg(long)]
    pub epochs_rest: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Drop the diffuse term (same as --beta 0).
    #[arg(long)]
    pub no_diffuse: bool,
    #[arg(long, value_enum, default_value_t = LossArg::L1)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    /// Per-epoch loss curve; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Run manifest; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Log progress every this many epochs.
    #[arg(long, default_value_t = 1000)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    pub params: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Output image (.hdr or .pfm).
    #[arg(long)]
    pub out: PathBuf,
    /// Output width; height is half of it.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetricsArgs {
    pub params: PathBuf,
    /// Ground-truth frames; a glob, matched to parameter frames in sorted order.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub report: PathBuf,
    /// Evaluation grid height; defaults to the fit's grid, else 256.
    #[arg(long)]
    pub grid_height: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RenderBallsArgs {
    /// A params.json file or an environment image.
    pub source: PathBuf,
    /// Comma-separated roughness values in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.25,0.5,1.0")]
    pub roughness: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame to use when the source is a params file.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Ball diameter in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = asgfit::render::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StackRowsArgs {
    /// A frame glob or a params.json file.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub row: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Reconstruction width when the input is a params file.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    /// Dim sky, a sun and two colored windows.
    Studio,
    /// Clear sky with a small, very bright sun.
    Sunny,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Scene::Studio)]
    pub scene: Scene,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Output image. With --frames > 1, `_NNN` is inserted before the extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    /// Rotation about +Z between frames, in degrees.
    #[arg(long, default_value_t = 2.0)]
    pub step_deg: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
