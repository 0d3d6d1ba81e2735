//! Command-line surface of the `lmm` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Latent matching models: build corpora, mine knowledge, train, rank, evaluate.
#[derive(Debug, Parser, Serialize)]
#[command(name = "lmm", version, about, max_term_width = 100)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all available cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Write a JSON manifest recording inputs, outputs, and the config hash.
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// One pipeline stage per subcommand.
#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Build vocabulary, idf table, and cross-covariance cache from a click log.
    BuildCorpus(BuildCorpusArgs),
    /// Mine synonym pairs from shared click-graph contexts.
    MineSynonyms(MineSynonymsArgs),
    /// Mine characteristic title terms per document tag.
    MineTags(MineTagsArgs),
    /// Train a latent matching model.
    Train(TrainArgs),
    /// Rank a document collection for a list of queries.
    Rank(RankArgs),
    /// Score a ranking against graded relevance judgments.
    Evaluate(EvaluateArgs),
}

/// Arguments for `build-corpus`.
#[derive(Debug, Args, Serialize)]
pub struct BuildCorpusArgs {
    /// Click log TSV: query, doc id, doc title, clicks.
    #[arg(long, value_name = "FILE")]
    pub clicks: PathBuf,

    /// Minimum occurrences for a term to enter the vocabulary.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub min_count: u32,

    /// Output vocabulary file (one term per line; line number is the id).
    #[arg(long, value_name = "FILE")]
    pub vocab_out: PathBuf,

    /// Output binary cross-covariance cache.
    #[arg(long, value_name = "FILE")]
    pub covariance_out: PathBuf,

    /// Optional output idf table (term and weight per line).
    #[arg(long, value_name = "FILE")]
    pub idf_out: Option<PathBuf>,
}

/// Arguments for `mine-synonyms`.
#[derive(Debug, Args, Serialize)]
pub struct MineSynonymsArgs {
    /// Click log TSV: query, doc id, doc title, clicks.
    #[arg(long, value_name = "FILE")]
    pub clicks: PathBuf,

    /// Keep only the top K pairs by support.
    #[arg(long, value_name = "K", default_value_t = 1000)]
    pub top_k: usize,

    /// Scale of the logistic map from support to pair weight.
    #[arg(long, value_name = "S", default_value_t = 1.0)]
    pub weight_scale: f64,

    /// Output TSV: term1, term2, support, weight (support descending).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Arguments for `mine-tags`.
#[derive(Debug, Args, Serialize)]
pub struct MineTagsArgs {
    /// Click log TSV: query, doc id, doc title, clicks.
    #[arg(long, value_name = "FILE")]
    pub clicks: PathBuf,

    /// Tag assignments TSV: doc id, comma-separated tags.
    #[arg(long, value_name = "FILE")]
    pub tags: PathBuf,

    /// Keep the top K terms per tag.
    #[arg(long, value_name = "K", default_value_t = 10)]
    pub top_k: usize,

    /// Minimum occurrences for a term to enter the vocabulary.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub min_count: u32,

    /// Output TSV: tag, term, weight.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Arguments for `train`.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Click log to build the corpus from (alternative to --covariance).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "covariance",
        conflicts_with = "covariance"
    )]
    pub clicks: Option<PathBuf>,

    /// Prebuilt cross-covariance cache (requires --vocab).
    #[arg(long, value_name = "FILE", requires = "vocab")]
    pub covariance: Option<PathBuf>,

    /// Vocabulary matching --covariance.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Minimum term occurrences when building from --clicks.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub min_count: u32,

    /// Synonym pairs TSV feeding the query-side knowledge term.
    #[arg(long, value_name = "FILE")]
    pub synonyms: Option<PathBuf>,

    /// Tag-term pairs TSV feeding the document-side knowledge term.
    #[arg(long, value_name = "FILE")]
    pub tag_terms: Option<PathBuf>,

    /// Existing model to continue training from.
    #[arg(long, value_name = "FILE")]
    pub warm_start: Option<PathBuf>,

    /// Key=value hyperparameter file; individual flags override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Latent dimension (required unless set by --config or --warm-start).
    #[arg(long, value_name = "D")]
    pub dim: Option<usize>,

    /// Weight of the matching penalty coupling the two mappings.
    #[arg(long, value_name = "W")]
    pub theta2: Option<f64>,

    /// Ridge weight on the query-side mapping.
    #[arg(long, value_name = "W")]
    pub lambda2: Option<f64>,

    /// Ridge weight on the document-side mapping.
    #[arg(long, value_name = "W")]
    pub rho2: Option<f64>,

    /// Weight of the query-side knowledge term.
    #[arg(long, value_name = "W")]
    pub alpha: Option<f64>,

    /// Weight of the document-side knowledge term.
    #[arg(long, value_name = "W")]
    pub beta: Option<f64>,

    /// Gradient step size (used with --method gd).
    #[arg(long, value_name = "G")]
    pub gamma: Option<f64>,

    /// Maximum training iterations.
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,

    /// Relative objective change that declares convergence.
    #[arg(long, value_name = "T")]
    pub tol: Option<f64>,

    /// Optimizer: cd (coordinate descent) or gd (gradient descent).
    #[arg(long, value_name = "M")]
    pub method: Option<String>,

    /// Seed for mapping initialization.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,

    /// Output model file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Objective trace CSV (default: model path with extension trace.csv).
    #[arg(long, value_name = "FILE")]
    pub trace_out: Option<PathBuf>,

    /// Vocabulary sidecar (default: model path with extension vocab.txt).
    #[arg(long, value_name = "FILE")]
    pub vocab_out: Option<PathBuf>,
}

/// Arguments for `rank`.
#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Override the vocabulary path stored in the model.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Document collection TSV: doc id, title.
    #[arg(long, value_name = "FILE")]
    pub collection: PathBuf,

    /// Query file, one query per line.
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,

    /// Ranking depth per query.
    #[arg(long, value_name = "K", default_value_t = 10)]
    pub k: usize,

    /// Scoring mode: latent, combined, or bm25.
    #[arg(long, value_name = "MODE", default_value = "combined")]
    pub mode: String,

    /// Output ranking TSV: query, rank, doc id, score.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Arguments for `evaluate`.
#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Judgments TSV: query, doc id, grade 0-3.
    #[arg(long, value_name = "FILE")]
    pub judgments: PathBuf,

    /// Precomputed ranking file to score (alternative to --model).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "model",
        conflicts_with_all = ["model", "candidates", "vocab", "mode", "k"]
    )]
    pub run: Option<PathBuf>,

    /// Model for re-ranking --candidates before scoring.
    #[arg(long, value_name = "FILE", requires = "candidates")]
    pub model: Option<PathBuf>,

    /// Candidate pool TSV: query, doc id, doc title.
    #[arg(long, value_name = "FILE", requires = "model")]
    pub candidates: Option<PathBuf>,

    /// Override the vocabulary path stored in the model.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Scoring mode when re-ranking: latent, combined, or bm25.
    #[arg(long, value_name = "MODE")]
    pub mode: Option<String>,

    /// Re-ranking depth (default: all candidates of each query).
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,

    /// Click log supplying query frequencies for head/tail splits.
    #[arg(long, value_name = "FILE", conflicts_with = "frequencies")]
    pub clicks: Option<PathBuf>,

    /// Query frequency TSV (query, count) for head/tail splits.
    #[arg(long, value_name = "FILE")]
    pub frequencies: Option<PathBuf>,

    /// NDCG cutoffs for the report.
    #[arg(long, value_name = "K,K,...", value_delimiter = ',', default_values_t = [1, 3, 5, 10])]
    pub cutoffs: Vec<usize>,

    /// Also write the report as CSV: split, cutoff, ndcg, n_queries.
    #[arg(long, value_name = "FILE")]
    pub csv_out: Option<PathBuf>,
}
