use std::path::PathBuf;

use clap::builder::TypedValueParser as _;
use clap::{Args, Parser, Subcommand};
use fussi_core::classifiers::ClassifierKind;
use fussi_core::fusion::FusionMode;
use fussi_core::tracker::TrackerMode;

#[derive(Debug, Parser)]
#[command(name = "fussi", version, about = "Pedestrian crossing-intention pipeline")]
pub struct Cli {
    /// TOML file whose keys may set any flag; flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write timings.json (wall-clock per stage; not reproducible).
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Track detections of a scene.
    Track(TrackArgs),
    /// Extract per-frame skeletal features for tracked boxes.
    Features(FeaturesArgs),
    /// Train an intent classifier on ground-truth tracks of scenes.
    Train(TrainArgs),
    /// Track a scene and predict crossing intent per track-frame.
    Predict(PredictArgs),
    /// Score tracks and predictions, or compare all fusion modes.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub peds: Option<usize>,
    #[arg(long)]
    pub frames: Option<u32>,
    #[arg(long)]
    pub crossing_fraction: Option<f64>,
    /// Probability that a detection is dropped.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Uniform detection noise amplitude in pixels.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub keypoint_dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    #[arg(long)]
    pub mode: Option<TrackerMode>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    /// tracks.csv to use instead of running the tracker.
    #[arg(long, value_name = "FILE")]
    pub tracks: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<TrackerMode>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long)]
    pub fusion: Option<FusionMode>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["14", "16"]).map(|s| s.parse::<usize>().unwrap()))]
    pub window: Option<usize>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scene directory (repeatable).
    #[arg(long = "scene", value_name = "DIR", required = true)]
    pub scenes: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long)]
    pub mode: Option<TrackerMode>,
    #[arg(long)]
    pub fusion: Option<FusionMode>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scene directory supplying gt.csv and labels.csv.
    #[arg(long, value_name = "DIR")]
    pub scene: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub tracks: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// labels.csv overriding the scene's.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Comma list of prf, ap, mota, coverage, m123 (default: all).
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Score non-crossing pedestrians in M1/M2/M3 as correct rejections.
    #[arg(long)]
    pub include_non_crossing: bool,
    /// `all` trains on --train scenes and compares every fusion mode on
    /// --test scenes.
    #[arg(long)]
    pub mode: Option<String>,
    /// Training scenes for `--mode all` (repeatable).
    #[arg(long = "train", value_name = "DIR")]
    pub train: Vec<PathBuf>,
    /// Test scenes for `--mode all` (repeatable).
    #[arg(long = "test", value_name = "DIR")]
    pub test: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}
