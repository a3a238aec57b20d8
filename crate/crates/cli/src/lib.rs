//! The `fairgap` command line: synthesize corpora, perturb and debias them,
//! train the bag-of-words model, rescale its gender weights and audit it.
//!
//! Exit codes: 0 on success, 2 when an audit completed but some gap value is
//! missing (the report is still written), 1 on hard errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fairgap::debias::{CfWeightStrategy, CompositionOrder, Method};
use fairgap::model::GenderSelection;
use fairgap::perturb::GenderLexicon;
use fairgap::TrainConfig;

pub mod commands;
pub mod manifest;
pub mod output;
pub mod pipeline;

#[derive(Debug, Parser)]
#[command(name = "fairgap", version, about = "Statistical and causal gender-gap audits for text classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every randomized stage; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Gender lexicon TSV; the built-in lexicon when absent.
    #[arg(long, global = true, env = "FAIRGAP_LEXICON")]
    pub lexicon: Option<PathBuf>,
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Table format for `eval` and `sweep`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Female,
    Male,
    Flip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth {
        /// JSON synthesis config; defaults for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "corpus.jsonl")]
        out: PathBuf,
    },
    /// Rewrite gender indicators in JSONL documents (stdin to stdout by default).
    Perturb {
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a debiasing method to a JSONL dataset.
    Debias {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "debiased.jsonl")]
        out: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, value_parser = parse_order, default_value = "resample-first")]
        order: CompositionOrder,
        #[arg(long = "cf-weight", value_parser = parse_cf_weight, default_value = "unit")]
        cf_weight: CfWeightStrategy,
        #[command(flatten)]
        classes: ClassArgs,
    },
    /// Train the bag-of-words model.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        classes: ClassArgs,
    },
    /// Accuracy and loss of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `eval.<format>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiply the weights of gender-indicator tokens by `w`.
    AdjustWeights {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        w: f64,
        #[arg(long, value_parser = parse_which, default_value = "both")]
        which: GenderSelection,
        #[arg(long, default_value = "adjusted.json")]
        out: PathBuf,
    },
    /// Statistical and causal gap report for a model on a dataset.
    Audit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output stem: writes `<name>.json`, `<name>.csv` and `<name>.manifest.json`.
        #[arg(long, default_value = "report")]
        name: String,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Audit a model at every gender-weight multiplier in a grid.
    Sweep {
        /// Dataset to audit.
        #[arg(long)]
        input: PathBuf,
        /// Trained model; when absent one is trained on `--train-input`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training data when no model is given; defaults to `--input`.
        #[arg(long)]
        train_input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        grid: Vec<f64>,
        #[arg(long, value_parser = parse_which, default_value = "both")]
        which: GenderSelection,
        /// Output stem: writes `<name>.<format>` and `<name>.manifest.json`.
        #[arg(long, default_value = "sweep")]
        name: String,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Run every debiasing plan of an experiment config end to end.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClassArgs {
    /// Class names in index order; inferred from the labels when absent.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON training config; the flags below override its fields.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub min_frequency: Option<usize>,
}

impl TrainArgs {
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.train_config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.l2 {
            cfg.l2 = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = self.min_frequency {
            cfg.min_frequency = v;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Class index whose predicted rate defines the PPR gaps.
    #[arg(long)]
    pub positive_class: Option<usize>,
    /// JSON report options (positive class, confidence buckets).
    #[arg(long)]
    pub report_options: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fairgap::Error| e.to_string())
}

fn parse_order(s: &str) -> Result<CompositionOrder, String> {
    s.parse().map_err(|e: fairgap::Error| e.to_string())
}

fn parse_cf_weight(s: &str) -> Result<CfWeightStrategy, String> {
    s.parse().map_err(|e: fairgap::Error| e.to_string())
}

fn parse_which(s: &str) -> Result<GenderSelection, String> {
    s.parse().map_err(|e: fairgap::Error| e.to_string())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = output::read_file(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// How a command that ran to completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    MissingValues,
    PlanFailures,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::MissingValues => 2,
            Outcome::PlanFailures => 1,
        }
    }
}

/// Shared state for one invocation.
pub struct Context {
    pub global: GlobalArgs,
    pub command_line: Vec<String>,
    pub lexicon: GenderLexicon,
}

impl Context {
    pub fn new(global: GlobalArgs, command_line: Vec<String>) -> Result<Self> {
        let lexicon = match &global.lexicon {
            Some(p) => GenderLexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
            None => GenderLexicon::default(),
        };
        Ok(Context { global, command_line, lexicon })
    }

    pub fn out_path(&self, p: &Path) -> PathBuf {
        self.global.out_dir.join(p)
    }
}

pub fn run(cli: Cli, command_line: Vec<String>) -> Result<Outcome> {
    let ctx = Context::new(cli.global, command_line)?;
    commands::dispatch(&ctx, cli.command)
}

/// Parse, run and map the result onto the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command_line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli, command_line) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
