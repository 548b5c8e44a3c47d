//! `juris`: command-line driver for indexing, indicator generation, feature
//! fusion, scoring, attribution and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use juris_core::inference::GenerationMode;
use juris_core::lexical::{TokenizerConfig, TokenizerMode};

use crate::config::RunConfig;

/// An error in how the command was invoked, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "juris", version, about = "Legal case retrieval with latent legal indicators")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config file, then JURIS_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a BM25 inverted index over a corpus.
    Index(IndexArgs),
    /// Offline silver-label distillation: render prompts, ingest responses.
    #[command(subcommand)]
    Distill(DistillCommand),
    /// Fit the built-in indicator generator on a labeled corpus.
    TrainGen(TrainGenArgs),
    /// Infer charge and element indicators for queries.
    Infer(InferArgs),
    /// Dump evidence vectors for query pools.
    Features(FeaturesArgs),
    /// Train the fusion scorer on a feature dump.
    TrainScorer(TrainScorerArgs),
    /// Rank every query's candidate pool.
    Rank(RankArgs),
    /// Compute retrieval metrics for a run.
    Eval(EvalArgs),
    /// Run ablation variants on a train/test split.
    Ablate(AblateArgs),
    /// Exact Shapley attributions for scored pairs.
    Shapley(ShapleyArgs),
    /// Data-efficiency sweep over generator training ratios.
    Sweep(SweepArgs),
    /// Write a seeded synthetic corpus with planted hard negatives.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TokenizerArg {
    Words,
    Cjk,
}

impl TokenizerArg {
    /// `base` with its segmentation mode replaced.
    pub fn config(self, base: TokenizerConfig) -> TokenizerConfig {
        let mode = match self {
            TokenizerArg::Words => TokenizerMode::UnicodeWords,
            TokenizerArg::Cjk => TokenizerMode::CjkBigramHybrid,
        };
        TokenizerConfig { mode, ..base }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Hierarchical,
    Independent,
}

impl From<ModeArg> for GenerationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hierarchical => GenerationMode::Hierarchical,
            ModeArg::Independent => GenerationMode::Independent,
        }
    }
}

#[derive(Args, Debug)]
pub struct LexicalArgs {
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
}

impl LexicalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.tokenizer {
            cfg.tokenizer = t.config(cfg.tokenizer);
        }
        if let Some(k1) = self.k1 {
            cfg.bm25.k1 = k1;
        }
        if let Some(b) = self.b {
            cfg.bm25.b = b;
        }
    }
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub lexical: LexicalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum DistillCommand {
    /// Write one prompt file per labeled document.
    Render {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fact text is truncated to this many characters.
        #[arg(long, default_value_t = 2000)]
        max_chars: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and clean response files into a silver-labeled corpus.
    Ingest {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Replacement list of sentencing terms, one per line.
        #[arg(long)]
        forbidden_terms: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        min_elements: usize,
        #[arg(long, default_value_t = 10)]
        max_elements: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TrainGenArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub indicators: Option<PathBuf>,
    /// Prebuilt index; built from the corpus when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Retrieve the top k by BM25 for queries without a pool.
    #[arg(long)]
    pub fallback_top_k: Option<usize>,
    #[command(flatten)]
    pub lexical: LexicalArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSelection {
    /// Every pool candidate.
    Pool,
    /// Positives plus BM25 hard negatives.
    Training,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub positive_threshold: Option<u32>,
    #[arg(long, value_enum, default_value_t = RowSelection::Pool)]
    pub rows: RowSelection,
    /// Hard negatives per positive for `--rows training`.
    #[arg(long)]
    pub neg_ratio: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainScorerArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Relabel rows from these judgments instead of the label column.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub positive_threshold: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Per-epoch mean training loss, one value per line.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Score with the unweighted feature sum instead of a trained model.
    #[arg(long, conflicts_with = "model")]
    pub rule_based: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub positive_threshold: Option<u32>,
    /// Second run for a paired randomization test against `--run`.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub train_queries: Option<PathBuf>,
    #[arg(long)]
    pub test_queries: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub positive_threshold: Option<u32>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// File-backed indicators; the built-in generator is used when absent.
    #[arg(long)]
    pub indicators: Option<PathBuf>,
    #[arg(long)]
    pub fallback_top_k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub lexical: LexicalArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Comma-separated variants; all applicable ones by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ShapleyArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Feature dump whose mean is the baseline; defaults to `--features`.
    #[arg(long)]
    pub baseline_features: Option<PathBuf>,
    /// Attribute only rows labeled positive.
    #[arg(long)]
    pub positives_only: bool,
    /// Global mean |phi| per feature as CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,1.0")]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the rows with full metrics as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator settings; missing fields take their defaults.
    #[arg(long)]
    pub synth_config: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            e.exit();
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run `juris --help` for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
