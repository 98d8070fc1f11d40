//! `pf`: synthesize particle datasets, run the Hough baseline, evaluate
//! detectors and fit learning-rate ranges.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "pf",
    version,
    about = "Synthetic particle micrographs and detector evaluation"
)]
pub struct Cli {
    /// Seed for every random draw; overrides the seed in a scene config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate images and ground-truth annotations.
    Synth(SynthArgs),
    /// Detect particles with the circular Hough transform.
    DetectHough(HoughArgs),
    /// Compare detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Size statistics and histogram of an annotations file.
    Psd(PsdArgs),
    /// KL divergence between two histograms.
    Kl(KlArgs),
    /// Fit a learning-rate range test curve.
    LrFit(LrFitArgs),
    /// Replay the early-stopping rule over a loss history.
    EarlyStop(EarlyStopArgs),
    /// Encode or decode run-length masks.
    #[command(subcommand)]
    Rle(RleCommand),
    /// Check an annotations or detections file against the schema.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene config JSON.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped scene config (default, final-training).
    #[arg(long)]
    pub preset: Option<String>,
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images; without it the config's split sizes are used.
    #[arg(long)]
    pub count: Option<u32>,
    /// Split receiving `--count` images.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Dataset name recorded in the manifests.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Also write the feature maps of every image.
    #[arg(long)]
    pub dump_maps: bool,
}

#[derive(Debug, Args)]
pub struct HoughArgs {
    /// Annotations file (or the directory holding `annotations.json`) listing the images.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output detections file.
    #[arg(long)]
    pub out: PathBuf,
    /// Hough parameter JSON; flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub r_min: Option<u32>,
    #[arg(long)]
    pub r_max: Option<u32>,
    #[arg(long)]
    pub accumulator_threshold: Option<f64>,
    #[arg(long)]
    pub edge_threshold: Option<f64>,
    #[arg(long)]
    pub nms_distance_factor: Option<f64>,
    #[arg(long)]
    pub max_circles: Option<usize>,
    /// Timed repetitions of the full run.
    #[arg(long, default_value_t = 10)]
    pub repeat: u32,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth annotations.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections.
    #[arg(long)]
    pub det: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One report row per image instead of one for the whole set.
    #[arg(long)]
    pub per_image: bool,
    /// Ground-truth diameter used as reference.
    #[arg(long, value_enum, default_value = "feret")]
    pub reference: Reference,
    /// Sample name in the report (default: the ground-truth directory name).
    #[arg(long)]
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    Feret,
    Circle,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    /// Annotations or detections file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Diameter measure.
    #[arg(long, value_enum, default_value = "feret")]
    pub diameter: Reference,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// Histogram range `LO HI` in px (default: 0 to the largest diameter).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub range: Option<Vec<f64>>,
    /// Directory for histogram.csv and psd.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KlArgs {
    /// Histogram CSV of the reference distribution.
    pub p: PathBuf,
    /// Histogram CSV of the compared distribution.
    pub q: PathBuf,
}

#[derive(Debug, Args)]
pub struct LrFitArgs {
    /// Two-column CSV `alpha,loss`.
    #[arg(long)]
    pub curve: PathBuf,
    /// Lower learning-rate bound of the fit (default: detected from the curve).
    #[arg(long)]
    pub alpha_min: Option<f64>,
    /// Median-filter the loss (5 points) before fitting.
    #[arg(long)]
    pub median: bool,
    /// Output lr_range.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EarlyStopArgs {
    /// loss_history.csv with columns epoch,L_tr,L_val.
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long, default_value_t = pf_core::lr::final_training::EARLY_STOPPING_PATIENCE)]
    pub patience: u32,
}

#[derive(Debug, Subcommand)]
pub enum RleCommand {
    /// PNG mask (nonzero = foreground) to RLE JSON.
    Encode {
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RLE JSON (`{width, height, runs}`) to PNG mask.
    Decode {
        rle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Auto,
    Gt,
    Det,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some()
            || e.downcast_ref::<pf_core::Error>()
                .is_some_and(|e| matches!(e.kind(), "io" | "image"))
    });
    if io {
        2
    } else {
        1
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<pf_core::Error>().map(|e| e.kind()))
        .unwrap_or("error");
    let mut obj = serde_json::json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    });
    if let Some(pf_core::Error::Schema { path, .. }) =
        err.chain().find_map(|e| e.downcast_ref::<pf_core::Error>())
    {
        obj["error"]["json_path"] = path.clone().into();
    }
    obj
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = anyhow::anyhow!("{}", e.render().to_string().trim());
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "usage", "message": err.to_string()}})
            );
            return ExitCode::from(1);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
