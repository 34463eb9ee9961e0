//! `attrib`: train the encoder classifier, compute token relevance and run
//! the deletion, ranking and correlation protocols.
//!
//! Exit codes: 0 success, 1 internal error or failed check, 2 usage or
//! input error.
//!
//! Output files (all written atomically, plus `manifest.json`):
//!
//! | command     | files |
//! |-------------|-------|
//! | `train`     | `model.ckpt`, `train_log.json` |
//! | `attribute` | `relevance.jsonl`, `heatmap.html` |
//! | `ablate`    | `ablation.csv` (`method,k,accuracy,n`), `ablation.json` |
//! | `correlate` | `correlation.csv` (`method,row,col,r,shared`), `correlation.json` |
//! | `rank`      | `rank.json` (`{top:[{word,mean,count}], bottom:[...]}`) |
//! | `gradcheck` | `gradcheck.json` when `--out` is given |
//! | `gen-toy`   | `train.tsv`, `dev.tsv`, `test.tsv` |
//! | `split`     | `dev.tsv`, `test.tsv` |

mod commands;
mod config;
mod failure;
mod heatmap;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use attrib_core::attribution::Method;
use attrib_core::model::Target;
use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser)]
#[command(name = "attrib", version, about = "Token attribution for a transformer sentiment classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary, fit the classifier and save the best-dev checkpoint.
    Train(TrainArgs),
    /// Write one relevance map per sentence plus an HTML heatmap.
    Attribute(AttributeArgs),
    /// Word-deletion curves for each method and the random baseline.
    Ablate(AblateArgs),
    /// Word-level relevance correlation across seeds or datasets.
    Correlate(CorrelateArgs),
    /// Top and bottom words by mean relevance.
    Rank(RankArgs),
    /// Finite-difference and conservation checks on random models.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic cue-word corpus.
    GenToy(GenToyArgs),
    /// Split a labelled file into dev and test halves by alternating rows.
    Split(SplitArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// JSON run configuration (model shape and training settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Logit,
    Prob,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Logit => Target::Logit,
            TargetArg::Prob => Target::Probability,
        }
    }
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Args)]
pub struct LrpArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
}

#[derive(Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// gs | gi | lrp | lat
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_enum, default_value = "logit")]
    pub target: TargetArg,
    /// Explain this class instead of the predicted one.
    #[arg(long)]
    pub class: Option<usize>,
    #[command(flatten)]
    pub lrp: LrpArgs,
    /// Include per-dimension relevance in the output.
    #[arg(long)]
    pub dims: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "gs,gi,lrp,lat")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub kmax: usize,
    #[arg(long, default_value_t = attrib_core::evaluation::DEFAULT_RANDOM_REPEATS)]
    pub random_repeats: usize,
    /// Seed for the random deletion orders.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "logit")]
    pub target: TargetArg,
    #[command(flatten)]
    pub lrp: LrpArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CorrelateMode {
    Seeds,
    Datasets,
}

#[derive(Args)]
pub struct CorrelateArgs {
    #[arg(long, value_enum)]
    pub mode: CorrelateMode,
    /// seeds mode: training corpus.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// seeds mode: dev corpus.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// seeds mode: corpus the models are explained on.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// seeds mode: the two training seeds, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub seeds: Vec<u64>,
    /// seeds mode: JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// datasets mode: `CKPT=DATA`, repeated once per dataset.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "gs,gi")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RankArgs {
    /// JSON-lines relevance file written by `attribute`.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Keep punctuation-only tokens.
    #[arg(long)]
    pub keep_punct: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// JSON run configuration for the model shape.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use a wrong GELU derivative; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_vjp: bool,
}

#[derive(Args)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub dev: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("ATTRIB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("ATTRIB_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::internal)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Attribute(a) => commands::attribute(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Correlate(a) => commands::correlate(a),
        Command::Rank(a) => commands::rank(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::GenToy(a) => commands::gen_toy(a),
        Command::Split(a) => commands::split(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
