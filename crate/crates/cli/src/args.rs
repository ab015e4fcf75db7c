//! Command-line surface. Every tunable is an `Option` here; resolution
//! against the config file and built-in defaults happens in `config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simdistill::losses::{ClassificationLoss, SimLossVariant};
use simdistill::student::Activation;

#[derive(Debug, Parser)]
#[command(
    name = "simdistill",
    version,
    about = "Cross-domain soft annotation and student distillation pipeline",
    propagate_version = true
)]
pub struct Cli {
    /// Base seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON config file. Flags override file values, which override
    /// built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain benchmark datasets.
    Gen(GenArgs),
    /// Build a datastore from source embeddings and labels.
    Build(BuildArgs),
    /// Soft-annotate target embeddings against a datastore.
    Annotate(AnnotateArgs),
    /// Train a student model on a target training set.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Run the six-arm ablation plus the similarity-variant comparison.
    Ablate(AblateArgs),
    /// Report each query's nearest datastore neighbors.
    Casestudy(CaseStudyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Directory for the six dataset files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long)]
    pub dim_teacher: Option<usize>,
    #[arg(long)]
    pub dim_student: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub source_train: Option<usize>,
    #[arg(long)]
    pub source_dev: Option<usize>,
    #[arg(long)]
    pub source_test: Option<usize>,
    #[arg(long)]
    pub target_train: Option<usize>,
    #[arg(long)]
    pub target_dev: Option<usize>,
    #[arg(long)]
    pub target_test: Option<usize>,
    /// Distance between class means.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Magnitude of the target domain's offset.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Per-coordinate Gaussian noise sigma.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Source embeddings: binary or JSONL.
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    /// Labels JSONL with id and label fields.
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// Class count; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Datastore file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Datastore file.
    #[arg(long, value_name = "FILE")]
    pub store: PathBuf,
    /// Target embeddings: binary or JSONL.
    #[arg(long, value_name = "FILE")]
    pub targets: PathBuf,
    /// Annotations JSONL to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Neighbors per query.
    #[arg(long)]
    pub k: Option<usize>,
    /// Distance kernel temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
}

/// Student architecture knobs, shared by train and ablate.
#[derive(Debug, Args)]
pub struct ArchFlags {
    /// Encoder hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    /// Representation width fed to the similarity loss.
    #[arg(long)]
    pub repr_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
}

/// Loss shape knobs, shared by train and ablate.
#[derive(Debug, Args)]
pub struct LossFlags {
    #[arg(long, value_enum)]
    pub classification_loss: Option<ClassificationArg>,
    #[arg(long, value_enum)]
    pub sim_loss: Option<SimLossArg>,
    #[arg(long)]
    pub sim_temperature: Option<f64>,
    /// Whether each anchor's own slot joins its similarity distribution.
    #[arg(long)]
    pub include_self_similarity: Option<bool>,
}

/// Optimization knobs, shared by train and ablate.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Epochs without dev improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset JSONL.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Dev dataset JSONL, scored with ground-truth labels.
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    /// Annotations JSONL; when given, training uses these soft labels
    /// instead of the dataset's ground truth.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Directory for the checkpoint and report.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub arch: ArchFlags,
    #[command(flatten)]
    pub loss: LossFlags,
    #[command(flatten)]
    pub opt: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Labeled dataset JSONL.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Optional JSON result file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Annotations JSONL for the pseudo-label arms.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    /// Directory for ablation.json and comparison.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub arch: ArchFlags,
    #[command(flatten)]
    pub loss: LossFlags,
    #[command(flatten)]
    pub opt: TrainFlags,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    /// Which geometry to search: the annotating embeddings or the trained
    /// student's representations.
    #[arg(long, value_enum, default_value = "teacher")]
    pub space: SpaceArg,
    /// Datastore file (teacher space).
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
    /// Query embeddings or dataset JSONL.
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Checkpoint file (student space).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Labeled source dataset JSONL to index (student space).
    #[arg(long, value_name = "FILE")]
    pub source_data: Option<PathBuf>,
    /// Neighbors per query.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Optional JSON report file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassificationArg {
    Kl,
    #[value(name = "cross_entropy", alias = "cross-entropy")]
    CrossEntropy,
}

impl From<ClassificationArg> for ClassificationLoss {
    fn from(arg: ClassificationArg) -> Self {
        match arg {
            ClassificationArg::Kl => ClassificationLoss::Kl,
            ClassificationArg::CrossEntropy => ClassificationLoss::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimLossArg {
    None,
    Kl,
    L1,
    L2,
}

impl From<SimLossArg> for SimLossVariant {
    fn from(arg: SimLossArg) -> Self {
        match arg {
            SimLossArg::None => SimLossVariant::None,
            SimLossArg::Kl => SimLossVariant::Kl,
            SimLossArg::L1 => SimLossVariant::L1,
            SimLossArg::L2 => SimLossVariant::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Relu,
}

impl From<ActivationArg> for Activation {
    fn from(arg: ActivationArg) -> Self {
        match arg {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Teacher,
    Student,
}
