use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "factlab", version, about = "Synthetic fact corpora, a small transformer, probes and interventions")]
pub struct Cli {
    /// Worker threads (also read from FACTLAB_THREADS).
    #[arg(long, global = true, env = "FACTLAB_THREADS")]
    pub threads: Option<usize>,

    /// Overwrite existing outputs whose content differs.
    #[arg(long, global = true)]
    pub force: bool,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus, the base world or the evaluation tasks.
    Gen(GenArgs),
    /// Build a vocabulary from corpora and evaluation items.
    Vocab(VocabArgs),
    /// Pretrain a fresh model.
    Pretrain(PretrainArgs),
    /// Finetune a checkpoint on a corpus.
    Train(TrainArgs),
    /// Finetune with active forgetting of the upper layers.
    Forget(ForgetArgs),
    /// Layer-wise delta ablation sweep.
    Ablate(AblateArgs),
    /// Comparison and negation ratio probes.
    Probe(ProbeArgs),
    /// Few-shot evaluation.
    Eval(EvalArgs),
    /// Grid search over learning rate and epochs.
    Grid(GridArgs),
    /// Comparison table from evaluation and probe reports.
    Report(ReportArgs),
    /// The full default recipe.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenStyle {
    Narrative,
    Referencing,
    PretrainWorld,
    EvalTasks,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub style: GenStyle,
    /// Fact registry JSON; the built-in registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Generation seed; each style has its own default.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Negatives per Referencing fact.
    #[arg(long, default_value_t = 3)]
    pub negatives: usize,
    /// Base world config JSON.
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Passage or evaluation item JSONL files.
    #[arg(long = "corpus", required = true, num_args = 1..)]
    pub corpora: Vec<PathBuf>,
    /// Registry whose probe prompts and entities are added.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOpts {
    /// Training config JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Model shape JSON ({n_layers, d_model, n_heads, d_ff, init_seed}).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub max_seq_len: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Freeze the upper two-thirds of the layers.
    #[arg(long)]
    pub lower_only: bool,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForgetArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Full schedule JSON ({reset_selector, pass1, pass2}).
    #[arg(long, conflicts_with = "config")]
    pub schedule: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct FewShotOpts {
    /// Evaluation item JSONL files or directories of them.
    #[arg(long = "evalset", required = true, num_args = 1..)]
    pub evalset: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub demo_seed: u64,
    #[arg(long, default_value_t = 12)]
    pub max_new_tokens: usize,
    /// Score multiple-choice items by the most likely letter.
    #[arg(long)]
    pub mc_ranking: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub finetuned: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value = "forward")]
    pub direction: String,
    #[command(flatten)]
    pub fewshot: FewShotOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub distractors: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub fewshot: FewShotOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Comma-separated peak learning rates.
    #[arg(long = "lr-grid", value_delimiter = ',', required = true)]
    pub lrs: Vec<f64>,
    /// Comma-separated epoch counts.
    #[arg(long = "epoch-grid", value_delimiter = ',', required = true)]
    pub epochs: Vec<usize>,
    /// Task whose accuracy is maximized.
    #[arg(long, default_value = "mc")]
    pub objective: String,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub fewshot: FewShotOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=path` evaluation reports.
    #[arg(long = "eval", num_args = 1..)]
    pub evals: Vec<String>,
    /// `name=path` probe reports.
    #[arg(long = "probe", num_args = 1..)]
    pub probes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline config JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip the ablation sweeps.
    #[arg(long)]
    pub no_sweeps: bool,
    #[arg(long)]
    pub out: PathBuf,
}
