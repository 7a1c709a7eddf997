mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probekit::dataset::SentimentAxis;
use probekit::{Arch, FamilyKind};

/// Latent-subset probing and bias measurement.
///
/// Every command reads an optional JSON config whose keys mirror the flags;
/// flags win. Outputs go to `--out` together with `config.json` (the
/// resolved configuration) and `provenance.tsv` (input hashes).
#[derive(Debug, Parser)]
#[command(name = "probekit", version)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses one per core. 1 is the determinism reference.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed for training and permutation tests.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check input files against their schemas and print a summary.
    Validate(ValidateArgs),
    /// Train a probe jointly with a subset distribution.
    TrainProbe(TrainProbeArgs),
    /// Greedy dimension selection with a trained probe.
    Select(SelectArgs),
    /// Metrics of a trained probe on a fixed dimension subset.
    Evaluate(EvaluateArgs),
    /// Pairwise top-k overlap tests between selection runs.
    Overlap(OverlapArgs),
    /// Association and bias measures.
    #[command(subcommand)]
    Bias(BiasCommand),
    /// Train the latent-sentiment gendered word model.
    GenderedModel(GenderedArgs),
    /// Perplexity-based fairness report.
    Sofa(SofaArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// FPRB representation matrix (needs --labels).
    #[arg(long, requires = "labels")]
    pub matrix: Option<PathBuf>,
    #[arg(long, requires = "matrix")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub entities: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub word_sets: Option<PathBuf>,
    #[arg(long)]
    pub ppl: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// FPRB representation matrix.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Labels TSV `row label lemma [split]`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub family: Option<FamilyKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub entropy_scale: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Train on the full representation, without a subset distribution.
    #[arg(long)]
    pub full_set_mode: Option<bool>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Checkpoint written by train-probe.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated dimensions; defaults to all.
    #[arg(long, conflicts_with = "selection")]
    pub dims: Option<String>,
    /// Selection JSON from `select`; its first `--k` dimensions are used.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// train, dev, test or all; defaults to test, then dev, then all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Selection run as NAME=PATH to a selection JSON; repeatable.
    #[arg(long = "run", value_name = "NAME=PATH")]
    pub runs: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    /// Hypergeometric tail instead of permutations.
    #[arg(long)]
    pub exact: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum BiasCommand {
    /// PMI from word-group co-occurrence counts.
    Pmi {
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        smoothing: Option<f64>,
    },
    /// PMI from entity-presence counts.
    Pmie {
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        min_count: Option<u64>,
    },
    /// Word embedding association test with a permutation p-value.
    Weat {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// TSV `set word` with sets x, y, a, b.
        #[arg(long)]
        word_sets: Option<PathBuf>,
        /// Replicas for the p-value; 0 skips the test.
        #[arg(long)]
        n_perm: Option<usize>,
    },
    /// Mean lexicon score of a whitespace-tokenized text.
    Lexicon {
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        axis: Option<SentimentAxis>,
    },
    /// Share of hurtful completions.
    Honest {
        /// TSV `template rank word`.
        #[arg(long)]
        completions: Option<PathBuf>,
        /// One word per line.
        #[arg(long)]
        hurt_words: Option<PathBuf>,
    },
    /// Weighted Jensen-Shannon divergence.
    Jsd {
        /// TSV `dist outcome prob`.
        #[arg(long)]
        dists: Option<PathBuf>,
        /// TSV `dist weight`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Interventional mutual information between gender and outcome.
    Mido {
        /// TSV `gender noun outcome prob` (needs --contexts).
        #[arg(long, requires = "contexts", conflicts_with = "observations")]
        table: Option<PathBuf>,
        /// TSV `gender noun weight`.
        #[arg(long, requires = "table")]
        contexts: Option<PathBuf>,
        /// TSV `gender noun outcome`; fits the table and runs a permutation test.
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        n_perm: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct GenderedArgs {
    /// Counts TSV `word group count` with genders as groups.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Sentiment lexicon for the posterior regularizer.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Posterior-regularizer weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// L1 weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use a single latent sentiment.
    #[arg(long)]
    pub collapsed: Option<bool>,
    /// Train every cell of the hyperparameter grid and average rankings.
    #[arg(long)]
    pub grid: Option<bool>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SofaArgs {
    /// PPL TSV `category stereotype_id identity ppl_probe ppl_identity`.
    #[arg(long)]
    pub ppl: Option<PathBuf>,
    #[arg(long)]
    pub top_n: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("probekit: {msg}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
