use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod backend;
mod commands;
mod config;
mod manifest;
mod parse;

#[derive(Parser, Debug)]
#[command(name = "coboost", version, about = "Coherence boosting experiments")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML file with one table of flag values per subcommand; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic copy-source task (corpus and item files).
    MakeTask(MakeTaskArgs),
    /// Train a toy model on a whitespace-tokenized corpus.
    Train(TrainArgs),
    /// Evaluate a task file at one (k, alpha).
    Eval(EvalArgs),
    /// Grid search (k, alpha) on validation items, then score the test items.
    Sweep(SweepArgs),
    /// Generate continuations for a prompts file.
    Generate(GenerateArgs),
    /// Coherence or dialog metrics of a generations file.
    Metrics(MetricsArgs),
    /// Distill a boosted toy model back into its parameters.
    Tune(TuneArgs),
    /// Derivative of held-out loss along the boosting direction.
    Analyze(AnalyzeArgs),
    /// Serve a backend over the HTTP logit protocol.
    Serve(ServeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    CopyEvents,
    AllPositions,
}

#[derive(Args, Debug, Serialize)]
pub struct MakeTaskArgs {
    #[arg(long, default_value_t = 8)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 200_000)]
    pub length: usize,
    #[arg(long, default_value_t = 10)]
    pub offset: usize,
    #[arg(long, default_value_t = 0.7)]
    pub copy_prob: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub context_len: usize,
    /// Length of each of the validation and test streams.
    #[arg(long, default_value_t = 20_000)]
    pub eval_length: usize,
    #[arg(long, value_enum, default_value_t = Selection::CopyEvents)]
    pub selection: Selection,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub max_context: usize,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Existing vocabulary; by default one is built from the corpus.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step training loss as CSV.
    #[arg(long)]
    pub loss_trace: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Lasttoken,
    Mc,
    Lama,
    Summarize,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub backend: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Short-context length (last-token and lama tasks).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    /// Divide answer log-probabilities by answer length.
    #[arg(long)]
    pub length_normalize: bool,
    /// Summarize: sentences kept from each summary.
    #[arg(long, default_value_t = 3)]
    pub sentences: usize,
    /// Summarize: generation budget.
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    #[arg(long, default_value = " TL;DR:")]
    pub separator: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveArg {
    Accuracy,
    Nll,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub backend: String,
    /// `start:end:step`, inclusive.
    #[arg(long, default_value = "-5:1:0.05", allow_hyphen_values = true)]
    pub alpha_grid: String,
    /// Comma-separated values and `a-b` ranges, e.g. `1-12` or `1,2,5`.
    #[arg(long, default_value = "1-16")]
    pub k_grid: String,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Accuracy)]
    pub objective: ObjectiveArg,
    #[arg(long)]
    pub length_normalize: bool,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Greedy,
    Sample,
    Topp,
    Beam,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub backend: String,
    /// JSONL with `{"id", "prompt"}` records.
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub temp: f64,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// `k:ALPHA` mixes the last-k expert as `f_k^α f_max^(1-α)`; `sep:ALPHA`
    /// boosts against the response generated after `--separator`.
    #[arg(long, allow_hyphen_values = true)]
    pub boost: Option<String>,
    #[arg(long, default_value = "")]
    pub separator: String,
    #[arg(long, default_value_t = 200)]
    pub max_new_tokens: usize,
    /// Comma-separated stop tokens (as text); the end-of-text token is always one when known.
    #[arg(long, value_delimiter = ',')]
    pub stop: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub generations: PathBuf,
    #[arg(long)]
    pub backend: String,
    /// JSONL with `{"id", "references": [..]}`; switches to the dialog table.
    #[arg(long = "ref")]
    pub references: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    pub lr_n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub short_len: usize,
    #[arg(long, default_value_t = 0.2)]
    pub long_thresh: f64,
    #[arg(long, default_value_t = 0.05)]
    pub short_thresh: f64,
    /// Score prompt tokens in perplexity too.
    #[arg(long)]
    pub include_prompt: bool,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TuneArgs {
    /// Toy model file.
    #[arg(long)]
    pub model: PathBuf,
    /// `k:ALPHA`: targets `f_k^α f_max^(1-α)`.
    #[arg(long, allow_hyphen_values = true)]
    pub boost: String,
    #[arg(long, default_value_t = 32)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// Restrict the loss to the last N positions of each sequence.
    #[arg(long)]
    pub tail: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub eval_sequences: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// KL trace as CSV (`step,mean_kl`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out corpus text.
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Also emit L_1..L_M and KL(f_M || f_k) for every k.
    #[arg(long)]
    pub pareto: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub backend: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::MakeTask(a) => commands::data::make_task(&a),
        Command::Train(a) => commands::data::train(&a),
        Command::Eval(a) => commands::eval::eval(&a),
        Command::Sweep(a) => commands::eval::sweep(&a),
        Command::Generate(a) => commands::generate::generate(&a),
        Command::Metrics(a) => commands::generate::metrics(&a),
        Command::Tune(a) => commands::model::tune(&a),
        Command::Analyze(a) => commands::model::analyze(&a),
        Command::Serve(a) => commands::model::serve(&a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<coboost::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
