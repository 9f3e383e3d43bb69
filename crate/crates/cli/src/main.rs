mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pude_core::bench::Method;

/// Positive-unlabeled document set expansion by density estimation.
#[derive(Parser, Debug)]
#[command(name = "pude", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: pude_core::Error| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
pub struct LpArgs {
    /// Labeled positives per split; a comma list gives one table row each.
    #[arg(long, value_delimiter = ',', conflicts_with = "lp_ratio")]
    pub lp_count: Vec<usize>,

    /// Labeled positives as a fraction of the unlabeled set, in (0, 1].
    #[arg(long)]
    pub lp_ratio: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExperimentArgs {
    /// JSON file with data source, labeling, hyperparameters and seeds.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Methods to run (bm25, nnpu-trans, pude-kde, pude-em); comma list.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,

    /// gaussian, text, topic1, covid, or a labeled JSONL corpus.
    #[arg(long)]
    pub data: Option<String>,

    /// TF-IDF vocabulary size for a JSONL corpus.
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,

    /// Seeds; comma list.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,

    /// scar or biased.
    #[arg(long)]
    pub labeling: Option<String>,

    /// Directory for reports and tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a JSONL corpus and write its feature matrix.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2000)]
        vocab_size: usize,
        /// Word-vector file; mean embeddings replace TF-IDF.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose labeled positives from a labeled corpus and write the split manifest.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        lp: LpArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// scar or biased.
        #[arg(long, default_value = "scar")]
        labeling: String,
        /// Bias direction for biased labeling; comma list of feature weights.
        #[arg(long, value_delimiter = ',')]
        bias_weights: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method on a split and save the model.
    Train {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Needed for BM25 (document text) and for nnPU without a configured prior.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// JSON with method hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every unlabeled document of a split with a trained model.
    Predict {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the corpus labels.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full experiment: split, train, predict and evaluate per method and seed.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        lp: LpArgs,
    },
    /// Run every method over a range of |LP| / |U| ratios.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Ascending ratios in (0, 1]; comma list.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.25,0.5,1")]
        ratios: Vec<f64>,
    },
    /// Build a comparison table from report files or directories.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest {
            input,
            vocab_size,
            embeddings,
            out,
        } => commands::ingest(&input, vocab_size, embeddings.as_deref(), &out),
        Command::Split {
            corpus,
            features,
            lp,
            seed,
            labeling,
            bias_weights,
            temperature,
            out,
        } => commands::split(&corpus, &features, &lp, seed, &labeling, bias_weights, temperature, &out),
        Command::Train {
            method,
            features,
            split,
            corpus,
            config,
            seed,
            out,
        } => commands::train(method, &features, &split, corpus.as_deref(), config.as_deref(), seed, &out),
        Command::Predict {
            method,
            model,
            features,
            split,
            out,
        } => commands::predict(method, &model, &features, &split, &out),
        Command::Eval {
            predictions,
            corpus,
            split,
            out,
        } => commands::eval(&predictions, &corpus, &split, out.as_deref()),
        Command::Run { exp, lp } => commands::run(&exp, &lp),
        Command::Sweep { exp, ratios } => commands::sweep(&exp, &ratios),
        Command::Report { inputs, out } => commands::report(&inputs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
