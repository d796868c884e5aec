use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "rainlane",
    version,
    about = "Synthesize rainy road images, restore them with dual-layer kernel prediction, and evaluate the results"
)]
pub struct Cli {
    /// Worker threads for parallel loops (bench defaults to 1).
    #[arg(long, global = true, env = "RAINLANE_THREADS")]
    pub threads: Option<usize>,

    /// Log filter, e.g. `warn`, `info`, `debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add synthetic rain, darkening and fog to one image.
    Synth(SynthArgs),
    /// Synthesize rainy counterparts for a directory and write a split manifest.
    BuildDataset(BuildDatasetArgs),
    /// Train one or both kernel-prediction layers on a manifest's train split.
    Train(TrainArgs),
    /// Restore images with a checkpoint.
    Infer(InferArgs),
    /// PSNR/SSIM of restored images against clean references.
    EvalRecon(EvalReconArgs),
    /// Depth error metrics of predicted depth maps against ground truth.
    EvalDepth(EvalDepthArgs),
    /// Time single- and dual-layer inference.
    Bench(BenchArgs),
    /// Synthesize, restore and score every image of a directory.
    Pipeline(PipelineArgs),
}

/// Synthesis parameters. Unset flags keep the config-file or default value.
#[derive(Debug, Clone, Default, Args)]
pub struct RcflaneFlags {
    /// TOML or JSON synthesis config (`.json` is read as JSON, anything else as TOML).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Rain weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Retention weight of the illumination mask.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Constant intensity blended in by the mask.
    #[arg(long)]
    pub mask_value: Option<f64>,
    /// Fog attenuation per pixel of distance score.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Atmospheric light.
    #[arg(long)]
    pub atmos: Option<f64>,
    /// Fog scale in pixels (default: half the image diagonal).
    #[arg(long)]
    pub fog_scale: Option<f64>,
    /// Fraction of pixels seeding a streak.
    #[arg(long)]
    pub density: Option<f64>,
    /// Streak length in pixels.
    #[arg(long)]
    pub streak_length: Option<usize>,
    /// Streak angle in degrees, counter-clockwise from +x.
    #[arg(long)]
    pub angle: Option<f64>,
    /// Standard deviation of the seeding noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Rain-layer cutoff applied after normalization.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clear input image (PNG or PPM).
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Rain seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the composited, masked, rain and transmission stages.
    #[arg(long)]
    pub emit_intermediates: bool,
    #[command(flatten)]
    pub rcflane: RcflaneFlags,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Directory of clear PNG/PPM images.
    #[arg(long)]
    pub src: PathBuf,
    /// Output directory for `rainy/` and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of images assigned to the train split.
    #[arg(long, default_value_t = 0.872)]
    pub split: f64,
    /// Dataset seed (split shuffle and per-image rain seeds).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of 16-bit ground-truth depth PNGs named like the sources.
    #[arg(long)]
    pub gt_depth_dir: Option<PathBuf>,
    #[command(flatten)]
    pub rcflane: RcflaneFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

/// Training parameters. Unset flags keep the config-file or default value.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// TOML or JSON training config.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Optimizer steps per layer.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Crops per step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initialization and crop sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side of the square training crops.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Hidden stage widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Predicted kernel size (odd).
    #[arg(long)]
    pub ksize: Option<usize>,
    /// Dilation levels.
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which layer(s) to train.
    #[arg(long, value_enum, default_value = "both")]
    pub layer: LayerChoice,
    /// Checkpoint providing layer 1 (required for `--layer 2`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate on the test split every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Write the periodic evaluations as CSV.
    #[arg(long)]
    pub eval_csv: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images to restore.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the first layer's output as `<stem>_mid.png`.
    #[arg(long)]
    pub emit_mid: bool,
}

#[derive(Debug, Args)]
pub struct EvalReconArgs {
    /// A restored image and its clean reference; repeatable.
    #[arg(long, num_args = 2, value_names = ["RESTORED", "CLEAN"], action = clap::ArgAction::Append)]
    pub pair: Vec<PathBuf>,
    /// Evaluate the entries of a dataset manifest instead.
    #[arg(long, conflicts_with = "pair")]
    pub manifest: Option<PathBuf>,
    /// Directory of restored `<stem>.png` files for the manifest entries
    /// (default: score the rainy images themselves).
    #[arg(long, requires = "manifest")]
    pub restored_dir: Option<PathBuf>,
    /// Manifest split to evaluate (train|test; default: all).
    #[arg(long, requires = "manifest")]
    pub split: Option<String>,
    /// Write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    /// A predicted depth PNG and its ground truth; repeatable.
    #[arg(long, num_args = 2, value_names = ["PRED", "GT"], action = clap::ArgAction::Append)]
    pub pair: Vec<PathBuf>,
    /// Directory of predicted depth PNGs, matched to `--gt-dir` by file name.
    #[arg(long, requires = "gt_dir", conflicts_with = "pair")]
    pub pred_dir: Option<PathBuf>,
    #[arg(long, requires = "pred_dir")]
    pub gt_dir: Option<PathBuf>,
    /// Upper depth clamp in meters.
    #[arg(long, default_value_t = rainlane_core::metrics::DEFAULT_DEPTH_CAP)]
    pub cap: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Timed runs.
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    /// Untimed runs before timing.
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Directory of clear PNG/PPM images.
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base rain seed; each image uses it xor a hash of its file name.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Depth model command run per image, e.g. "depth-model {in} {out}".
    #[arg(long)]
    pub depth_cmd: Option<String>,
    /// Ground-truth depth PNGs named like the clean images.
    #[arg(long, requires = "depth_cmd")]
    pub gt_depth_dir: Option<PathBuf>,
    #[arg(long, default_value_t = rainlane_core::metrics::DEFAULT_DEPTH_CAP)]
    pub depth_cap: f64,
    #[command(flatten)]
    pub rcflane: RcflaneFlags,
}
