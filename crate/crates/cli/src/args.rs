use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mixverify", version, about = "Gated connector alignment, self-verification and CoT curation")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference check of the full alignment objective.
    Gradcheck(GradcheckArgs),
    /// Desk-scale alignment pretraining of the connector.
    TrainAlign(TrainArgs),
    /// Self-verify a single question.
    Verify(VerifyArgs),
    /// Evaluate a benchmark with one strategy.
    Eval(EvalArgs),
    /// Self-verification accuracy over a grid of alpha values.
    Sweep(SweepArgs),
    /// Rewrite, score and filter CoT records.
    Curate(CurateArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `mock:<script.json>` or `remote:<url>`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub image: String,
    #[arg(long)]
    pub question: String,
    /// Answer option as `LETTER=text`; repeat for each option.
    #[arg(long = "option")]
    pub options: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Benchmark JSONL file.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// direct | cot | sv
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for cached generation traces.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub benchmark: PathBuf,
    /// `start:end:step`
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Rewriter/judge model: `mock:<script.json>` or `remote:<url>`.
    #[arg(long)]
    pub judge: Option<String>,
    /// Records JSONL file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}
