use std::path::PathBuf;

use anchorkit::geometry::Layer;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "anchorkit",
    version,
    about = "Anchor assignment, augmentation planning and evaluation for face detectors"
)]
pub struct Cli {
    /// Seed for every random draw; required by stochastic commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output format for tables and reports.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Main output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssignStrategy {
    Standard,
    AliAms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentStrategy {
    Mst,
    Rsc,
    Das,
    Sse,
}

/// Image size, given directly or per image through a JSON file.
#[derive(Debug, Clone, Args)]
pub struct DimsArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub width: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub height: Option<u32>,
    /// JSON object mapping image paths to `[width, height]`.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    pub dims: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the anchor grid of an image size.
    Anchors {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        width: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        height: u32,
    },

    /// Label the anchors of one annotated image.
    Assign {
        #[arg(long)]
        annotations: PathBuf,
        /// Image path in the annotation file; optional when it holds one image.
        #[arg(long)]
        image: Option<String>,
        #[arg(long, value_enum, default_value = "standard")]
        strategy: AssignStrategy,
        /// One predicted probability per anchor, in grid order.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        dims: DimsArgs,
        /// Per-layer statistics output.
        #[arg(long)]
        stats: Option<PathBuf>,
    },

    /// Draw augmentation plans for the annotated images.
    Augment {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum)]
        strategy: AugmentStrategy,
        /// Number of plans; images are visited in file order, cyclically.
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        dims: DimsArgs,
        /// Target-layer frequency summary output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },

    /// Cumulative face-scale distribution of an annotation file.
    ScaleStats {
        #[arg(long)]
        annotations: PathBuf,
        /// Face-scale thresholds in pixels.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "8,16,20,32,64,128,256,512"
        )]
        thresholds: Vec<f64>,
    },

    /// Search the face scale that puts a given share of faces on a layer.
    Calibrate {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        layer: Layer,
        #[arg(long)]
        ratio: f64,
    },

    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// `name=path` of a JSON subset list; repeatable.
        #[arg(long)]
        subset: Vec<String>,
        /// Run NMS on each image's detections first.
        #[arg(long)]
        nms: bool,
        /// Precision/recall CSV output.
        #[arg(long)]
        curve: Option<PathBuf>,
    },

    /// Context masks, discrepancy labels and loss for one image.
    Hcam {
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        scores_main: PathBuf,
        #[arg(long)]
        scores_prog: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        width: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        height: u32,
        /// Mask cells as `n index layer row col` lines.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Discrepancy labels as `index code` lines.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}
