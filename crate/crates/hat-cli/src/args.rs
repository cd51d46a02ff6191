//! Flag definitions and the flag/config-file merge.
//!
//! Every option can also come from a JSON config file (`--config run.json`)
//! whose keys are the long flag names with underscores; explicit flags win.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hat_core::dataset::AnnotationMode;
use hat_core::ingestion::FeatureFormat;
use hat_core::pipeline::Method;

#[derive(Parser)]
#[command(
    name = "hat",
    version,
    about = "Zero-shot classification via hierarchical transfer of semantic attributes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train attribute classifiers at every level of the taxonomy
    Train(TrainArgs),
    /// Score a test set against the taxonomy's unseen classes
    Predict(PredictArgs),
    /// Evaluate a prediction file against ground-truth labels
    Eval(EvalArgs),
    /// Generate the synthetic benchmark and compare hat/dap/ens on it
    Bench(BenchArgs),
    /// Source-set-complexity sweep: grow the seen set, watch the margin
    Sweep(SweepArgs),
    /// Generate synthetic benchmark files without running anything
    Synth(SynthArgs),
    /// Propagate class signatures through the taxonomy and dump the table
    Propagate(PropagateArgs),
}

/// How the class-attribute CSV's cells are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrValues {
    /// binary signature cells (0/1)
    Binary,
    /// real occurrence cells in `[0,1]`, binarized at the overall mean
    Occurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrMode {
    PerImage,
    PerClass,
}

impl From<AttrMode> for AnnotationMode {
    fn from(m: AttrMode) -> AnnotationMode {
        match m {
            AttrMode::PerImage => AnnotationMode::PerImage,
            AttrMode::PerClass => AnnotationMode::PerClass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl From<Format> for FeatureFormat {
    fn from(f: Format) -> FeatureFormat {
        match f {
            Format::Csv => FeatureFormat::Csv,
            Format::Binary => FeatureFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Hat,
    Dap,
    Ens,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Hat => Method::Hat,
            MethodArg::Dap => Method::Dap,
            MethodArg::Ens => Method::Ens,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file; explicit flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Taxonomy JSON file
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Training feature file (csv or binary)
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub feature_format: Option<Format>,
    /// Labels sidecar CSV (sample_id,class_id)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Attribute annotations: class-attribute CSV (per-class mode) or
    /// per-image CSV (per-image mode)
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub attr_mode: Option<AttrMode>,
    /// Whether class-attribute cells are binary or occurrences
    #[arg(long, value_enum)]
    pub attr_values: Option<AttrValues>,
    /// Optional split JSON re-kinding the taxonomy's leaves
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// L2-normalize every feature row on load
    #[arg(long)]
    pub l2_normalize: bool,
    /// Regularization grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for classifier training (default: all cores)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write support-set sizes per (node, attribute) as CSV
    #[arg(long)]
    pub dump_support_sizes: bool,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained model bank JSON
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Test feature file
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub feature_format: Option<Format>,
    /// Labels sidecar CSV for the test samples
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Class-attribute CSV describing the unseen classes
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub attr_values: Option<AttrValues>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Skip batch score normalization (hat/ens); enables streaming use
    #[arg(long)]
    pub no_normalize: bool,
    /// Describe unseen classes by their parent's attributes instead of
    /// declared signatures
    #[arg(long)]
    pub fallback_parent: bool,
    #[arg(long)]
    pub l2_normalize: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predictions CSV produced by `hat predict`
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Ground-truth labels CSV (sample_id,class_id)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Model bank (enables attribute AUC and level diagnostics)
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Test features (needed for attribute-level diagnostics)
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub feature_format: Option<Format>,
    /// Attribute ground truth: per-image CSV or class-attribute CSV
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub attr_mode: Option<AttrMode>,
    #[arg(long)]
    pub l2_normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthSpecArgs {
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub n_attributes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub subtree_shift_scale: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub unseen_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    /// Source-set sizes (numbers of seen classes), comma separated
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Seed for the class-subset shuffles (independent of the data seed)
    #[arg(long)]
    pub sweep_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    #[arg(long, value_enum)]
    pub feature_format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub attr_mode: Option<AttrMode>,
    #[arg(long, value_enum)]
    pub attr_values: Option<AttrValues>,
    /// Features + labels, only needed in per-image mode
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub feature_format: Option<Format>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
