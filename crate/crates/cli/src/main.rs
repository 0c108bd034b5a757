//! `midline`: tiling, target encoding, decoding, evaluation and self-checks
//! for middle-line oriented boxes.

mod commands;
mod error;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use midline_core::eval::{ApMode, EvalMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "midline",
    version,
    about = "Middle-line oriented object detection tools"
)]
pub struct Cli {
    /// Worker threads for file-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// RNG seed; the O2_SEED environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationFormat {
    Dota,
    Icdar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Map,
    Text,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Map => EvalMode::Map,
            ModeArg::Text => EvalMode::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApModeArg {
    #[value(name = "all-point")]
    AllPoint,
    #[value(name = "11-point")]
    ElevenPoint,
}

impl From<ApModeArg> for ApMode {
    fn from(m: ApModeArg) -> Self {
        match m {
            ApModeArg::AllPoint => ApMode::AllPoint,
            ApModeArg::ElevenPoint => ApMode::ElevenPoint,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VocabArgs {
    /// Class vocabulary: `dota`, `text`, or a comma-separated list of names.
    #[arg(long, default_value = "dota")]
    pub classes: String,
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    /// Output stride d.
    #[arg(long, default_value_t = 4)]
    pub stride: u32,
    /// Drift radius bound r in input pixels.
    #[arg(long, default_value_t = 16.0)]
    pub drift_r: f64,
    /// Lower bound of the horizontal-branch angle range, degrees.
    #[arg(long, default_value_t = 88.0)]
    pub branch_low: f64,
    /// Upper bound of the horizontal-branch angle range, degrees.
    #[arg(long, default_value_t = 92.0)]
    pub branch_high: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Heatmap binarization threshold (strict).
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    /// Cross-branch duplicate IoU threshold.
    #[arg(long, default_value_t = 0.7)]
    pub merge_iou: f64,
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// Focal exponent of the intersection-point loss.
    #[arg(long, default_value_t = 2.0)]
    pub focal_alpha: f64,
    /// Collinearity weight.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Perpendicularity weight.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Line Loss weight in the total.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Drop the perpendicularity term.
    #[arg(long)]
    pub text_mode: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotation files and cut them into overlapping tiles.
    Tile {
        /// Directory of DOTA `.txt` or ICDAR `gt_*.txt` files.
        #[arg(long)]
        input: PathBuf,
        /// Directory for per-tile ground-truth JSON.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = AnnotationFormat::Dota)]
        format: AnnotationFormat,
        #[arg(long, default_value_t = 800)]
        window: u32,
        #[arg(long, default_value_t = 0.25)]
        overlap: f64,
        /// Directory of images named after the annotation files, read for
        /// their dimensions. Without it the annotation extent is used.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Treat empty annotation files as errors.
        #[arg(long)]
        strict: bool,
    },
    /// Build target-map containers from ground-truth JSON.
    Encode {
        /// Ground-truth JSON file or directory of them.
        #[arg(long)]
        gt: PathBuf,
        /// Directory receiving one container per image.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        encode: EncodeArgs,
    },
    /// Decode map containers into detections.
    Decode {
        /// A container directory or a directory of containers.
        #[arg(long)]
        maps: PathBuf,
        /// Detections JSON output.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Encode then decode ground truth and report per-object IoU.
    Roundtrip {
        /// Ground-truth JSON file or directory; omit with --synthetic.
        #[arg(long, required_unless_present = "synthetic")]
        gt: Option<PathBuf>,
        /// Generate this many single-object images instead of reading --gt.
        #[arg(long, conflicts_with = "gt")]
        synthetic: Option<usize>,
        /// Side length of synthetic images.
        #[arg(long, default_value_t = 256)]
        image_size: u32,
        /// Smallest synthetic side length.
        #[arg(long, default_value_t = 16.0)]
        side_min: f64,
        /// Largest synthetic side length.
        #[arg(long, default_value_t = 128.0)]
        side_max: f64,
        /// Required fraction of resolved objects with IoU >= 0.99.
        #[arg(long, default_value_t = 0.99)]
        min_fraction: f64,
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        encode: EncodeArgs,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        /// Random evaluation points per loss.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        weights: WeightArgs,
        /// Adds this bias to every analytic gradient (negative control).
        #[arg(long, hide = true)]
        perturb_gradient: Option<f64>,
    },
    /// Score detections against ground truth.
    Eval {
        /// Ground-truth JSON file or directory.
        #[arg(long)]
        gt: PathBuf,
        /// Detections JSON file or directory.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Map)]
        mode: ModeArg,
        /// IoU threshold for a match.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = ApModeArg::AllPoint)]
        ap_mode: ApModeArg,
        /// Report JSON output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        vocab: VocabArgs,
    },
}

fn resolve_seed(flag: u64) -> CliResult<u64> {
    match std::env::var("O2_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::validation(format!("O2_SEED must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::validation("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::validation)?;
    }
    let seed = resolve_seed(cli.seed)?;
    commands::dispatch(cli.command, seed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.exit_code() == 2 {
                "io"
            } else {
                "validation"
            };
            log::emit("error", kind, &[("message", &e.to_string())]);
            ExitCode::from(e.exit_code())
        }
    }
}
