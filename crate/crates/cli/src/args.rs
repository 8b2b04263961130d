use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use toolret::refine::RefinerInit;
use toolret::Method;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "toolret",
    version,
    about = "Two-stage tool retrieval: build, train, retrieve, evaluate"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory that receives artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Embed queries and build Tool2Vec and description matrices.
    BuildEmbeddings(BuildEmbeddingsArgs),
    /// Train an MLC head, a refiner, or a triplet projection.
    Train(TrainArgs),
    /// Retrieve tools for one query or a batch file.
    Retrieve(RetrieveArgs),
    /// Score retrieval on a labeled split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus with an LLM client.
    GenDataset(GenDatasetArgs),
    /// Compare analytic and finite-difference gradients on random instances.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct CorpusArgs {
    #[arg(long)]
    pub tools: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizerArgs {
    #[arg(long, default_value_t = 4096)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub ngram_min: usize,
    #[arg(long, default_value_t = 5)]
    pub ngram_max: usize,
    /// Keep case instead of lowercasing before n-gram extraction.
    #[arg(long)]
    pub no_lowercase: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildEmbeddingsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub featurizer: FeaturizerArgs,
    /// Vectors file keyed by query_id and tool_id, used instead of the
    /// featurizer.
    #[arg(long)]
    pub precomputed: Option<PathBuf>,
    /// Splits whose queries contribute to Tool2Vec.
    #[arg(long, value_delimiter = ',', default_value = "train")]
    pub tool2vec_splits: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlc,
    Refiner,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Uniform,
    Zeros,
}

impl From<InitArg> for RefinerInit {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Uniform => RefinerInit::Uniform,
            InitArg::Zeros => RefinerInit::Zeros,
        }
    }
}

/// Where trained artifacts are read from.
#[derive(Debug, Args, Serialize, Default)]
pub struct ArtifactArgs {
    /// Output directory of build-embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub mlc: Option<PathBuf>,
    #[arg(long)]
    pub refiner: Option<PathBuf>,
    #[arg(long)]
    pub projection: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub model: ModelKind,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    /// Featurizer settings for MLC training when no embeddings dir is given.
    #[command(flatten)]
    pub featurizer: FeaturizerArgs,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Train share used to carve a val split when the corpus has none.
    #[arg(long, default_value_t = 0.8)]
    pub train_ratio: f64,
    /// Stage-1 candidates per training query (refiner).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value = "tool2vec")]
    pub stage1: Method,
    /// Hidden layer widths of the refiner.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0.05)]
    pub init_scale: f64,
    /// Triplet margin (projection).
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value = "tool2vec")]
    pub method: Method,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Skip the refiner even when one is supplied.
    #[arg(long)]
    pub stage1_only: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// A single query text.
    #[arg(
        long,
        conflicts_with = "queries_file",
        required_unless_present = "queries_file"
    )]
    pub query: Option<String>,
    /// JSON Lines of {"query_id"?, "text"} or plain text, one query per line.
    #[arg(long)]
    pub queries_file: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub ks: Vec<usize>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate a JSON Lines file of retrieval results instead of running
    /// retrieval.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// K used by the per-tool failure and failed-query length analyses.
    #[arg(long, default_value_t = 3)]
    pub failure_k: usize,
    /// Negative pairs sampled per query in the similarity-gap analysis.
    #[arg(long, default_value_t = 50)]
    pub gap_negatives: usize,
    /// Also write the raw query and tool vectors as CSV for external plotting.
    #[arg(long)]
    pub export_vectors: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct LlmArgs {
    /// JSON Lines fixture of {"match", "response"} replayed by a mock client.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Chat-completions endpoint URL.
    #[arg(long, conflicts_with = "mock")]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "")]
    pub model: String,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDatasetArgs {
    /// Tool catalog to sample from.
    #[arg(long)]
    pub tools: PathBuf,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 10)]
    pub t_pool: usize,
    #[arg(long, default_value_t = 2)]
    pub m_min: usize,
    #[arg(long, default_value_t = 5)]
    pub m_max: usize,
    #[arg(long, default_value_t = 5)]
    pub n_incontext: usize,
    #[arg(long, default_value = "")]
    pub library_instructions: String,
    #[arg(long, default_value_t = 1)]
    pub request_cap: usize,
    /// JSON array of {"instruction", "functions", "explanation"} examples.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    #[arg(long)]
    pub no_polish: bool,
    /// Queries file to judge the generated queries against.
    #[arg(long)]
    pub judge_against: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub judge_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Mlc,
    Refiner,
    Triplet,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = ObjectiveKind::All)]
    pub objective: ObjectiveKind,
    /// Random instances per objective.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}
