mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

/// Data-efficient 3D scene understanding: pair mining, scene-context pre-training,
/// active labeling, instance decoding and evaluation.
#[derive(Debug, Parser)]
#[command(name = "scenectx", version)]
struct Cli {
    /// Run-config file (`key = value` lines); command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Sem,
    Ins,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene: two posed views, the labelled room, offsets and scores.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400.0)]
        density: f64,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 5)]
        classes: u32,
        /// Width of the per-instance stand-in features written alongside.
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
    },
    /// Mine overlapping frame pairs from `<id>.ply` + `<id>.pose` files.
    MinePairs {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        min_overlap: Option<f64>,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition ids of every candidate point relative to each anchor.
    Partition {
        #[arg(long)]
        cloud: PathBuf,
        /// Candidate cloud; defaults to `--cloud`.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Comma-separated anchor indices.
        #[arg(long, value_delimiter = ',', required = true)]
        anchors: Vec<usize>,
        #[arg(long)]
        sectors: Option<usize>,
        #[arg(long)]
        shells: Option<usize>,
        /// Comma-separated shell boundaries in metres.
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Toy pre-training of free per-point embeddings on mined pairs.
    PretrainToy {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        sectors: Option<usize>,
        #[arg(long)]
        shells: Option<usize>,
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the points to annotate under a label budget.
    SelectPoints {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sparse label mask (needs semantic labels in the scene).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Decode instances from predicted offsets and semantic scores.
    ClusterInstances {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        offsets: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        min_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score semantic (mIoU) or instance (mAP@0.5) predictions against a labelled PLY.
    Evaluate {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Defaults to one more than the largest ground-truth class.
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `<metric>.csv` and `<metric>.json`.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Partitions × sampled-points grid on the synthetic toy dataset.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        points: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        partitions: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = scenectx::harness::TOY_DATASET_PAIRS)]
        scene_pairs: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    scenectx::parallel::init_global_pool()?;
    let cli = Cli::parse();
    commands::run(cli)
}
