use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use signagent::basetools::SegmenterConfig;
use signagent::enhanced::{EvidenceConfig, GbdtConfig, DEFAULT_TAU};
use signagent::workflows::{CueWeights, IdGlossParams, PseudoGlossParams};

#[derive(Parser, Debug)]
#[command(name = "signagent", version, about = "Tool-calling annotation agent for sign-language corpora")]
pub struct Cli {
    /// Seed for every random choice; scripted runs with the same seed are byte-identical.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-sample and per-gloss episodes.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a manifest, decode every feature file and optionally build the lexical graph.
    Ingest(IngestArgs),
    /// Write a seeded synthetic dataset with ground truth.
    SynthFixtures(SynthArgs),
    /// Order the lemmatised tokens of each sentence by sign (Task 1).
    Pseudogloss(PseudoGlossArgs),
    /// Refine visual ID-gloss clusters per gloss (Task 2).
    Idgloss(IdGlossArgs),
    /// Score written records against references.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Train the candidate reranker from ground-truth alignments.
    TrainRanker(TrainRankerArgs),
    /// Substring search over a knowledge graph with a radius closure.
    GraphQuery(GraphQueryArgs),
}

/// Input locations. `--fixture` fills any path not given from the synthetic layout.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Root of a dataset written by `synth-fixtures`.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// JSON Lines manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Dictionary JSON (defaults to the manifest header's `dictionary_ref`).
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Prototype banks JSON.
    #[arg(long)]
    pub banks: Option<PathBuf>,
    /// Stopword list, one per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Lemma table, `form<TAB>lemma` per line.
    #[arg(long)]
    pub lemmas: Option<PathBuf>,
    /// Linguistic graph JSON; the lexical graph built from the dictionary is used otherwise.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    pub backend: BackendKind,
    /// Chat completions endpoint (http backend).
    #[arg(long, env = "SIGNAGENT_LLM_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "SIGNAGENT_LLM_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Transport retries per request (429 and 5xx).
    #[arg(long, default_value_t = 2)]
    pub http_retries: usize,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Tool-invocation cap per episode (N >= 1); task default when omitted.
    #[arg(long)]
    pub max_calls: Option<usize>,
    /// Malformed outputs tolerated before an episode is rejected.
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EvidenceArgs {
    #[arg(long, default_value_t = EvidenceConfig::default().k_visual)]
    pub k_visual: usize,
    #[arg(long, default_value_t = EvidenceConfig::default().k_phono)]
    pub k_phono: usize,
    /// Candidates kept per segment.
    #[arg(long, default_value_t = EvidenceConfig::default().m)]
    pub m: usize,
    #[arg(long, default_value_t = EvidenceConfig::default().classifier_k)]
    pub classifier_k: usize,
    /// Components a gloss must match to be injected phonologically.
    #[arg(long, default_value_t = EvidenceConfig::default().min_component_hits)]
    pub min_component_hits: usize,
    #[arg(long, default_value_t = SegmenterConfig::default().window)]
    pub seg_window: usize,
    #[arg(long, default_value_t = SegmenterConfig::default().hi_factor)]
    pub seg_hi: f64,
    #[arg(long, default_value_t = SegmenterConfig::default().lo_factor)]
    pub seg_lo: f64,
    #[arg(long, default_value_t = SegmenterConfig::default().min_len)]
    pub seg_min_len: usize,
    #[arg(long, default_value_t = SegmenterConfig::default().min_speed)]
    pub seg_min_speed: f64,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the lexical graph built from the dictionary here.
    #[arg(long)]
    pub write_graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Expected norm of the embedding noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub glosses: Option<usize>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub idgloss_glosses: Option<usize>,
    #[arg(long)]
    pub variant_members: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PseudoGlossArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub evidence: EvidenceArgs,
    /// Trained reranker (see `train-ranker`).
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    /// Use (similarity + phonological score) / 2 instead of a trained reranker.
    #[arg(long, conflicts_with = "ranker")]
    pub no_ranker: bool,
    #[arg(long, default_value_t = CueWeights::default().visual)]
    pub w_visual: f64,
    #[arg(long, default_value_t = CueWeights::default().phono)]
    pub w_phono: f64,
    #[arg(long, default_value_t = CueWeights::default().activity)]
    pub w_activity: f64,
    #[arg(long, default_value_t = CueWeights::default().temporal)]
    pub w_temporal: f64,
    #[arg(long, default_value_t = CueWeights::default().semantic)]
    pub w_semantic: f64,
    /// Candidates requested by the first evidence call (scripted policy).
    #[arg(long, default_value_t = PseudoGlossParams::default().k_first)]
    pub k_first: usize,
    /// Candidates requested by the widened second call (scripted policy).
    #[arg(long, default_value_t = PseudoGlossParams::default().k_second)]
    pub k_second: usize,
    #[arg(long)]
    pub allow_shared_segments: bool,
    /// Output directory for records/, traces/ and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IdGlossArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Baseline clustering threshold on cosine distance.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Merge distance limit as a multiple of tau.
    #[arg(long, default_value_t = IdGlossParams::default().distance_factor)]
    pub distance_factor: f64,
    /// Jaccard threshold for a component to count as agreeing.
    #[arg(long, default_value_t = IdGlossParams::default().tau_overlap)]
    pub tau_overlap: f64,
    /// Agreeing components required to merge a singleton.
    #[arg(long, default_value_t = IdGlossParams::default().min_agree_singleton)]
    pub min_agree_singleton: usize,
    /// Agreeing components required to merge two multi-member clusters.
    #[arg(long, default_value_t = IdGlossParams::default().min_agree_multi)]
    pub min_agree_multi: usize,
    /// Ranked labels per sample in each cluster profile.
    #[arg(long, default_value_t = 2)]
    pub top_k: usize,
    #[arg(long, default_value_t = 5)]
    pub classifier_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// LCS% and Kendall tau per subset.
    Pseudogloss {
        /// Directory of pseudo-gloss records (or its parent holding records/).
        #[arg(long)]
        records: PathBuf,
        /// JSON Lines with `sample_id` and `reference` per line.
        #[arg(long)]
        references: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// IDs per gloss, entropy, silhouette and Calinski-Harabasz for baseline and refined clusters.
    Idgloss {
        #[arg(long)]
        records: PathBuf,
        /// Manifest giving the evaluation embedding of every sample.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainRankerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub evidence: EvidenceArgs,
    /// JSON Lines with `sample_id`, `gloss_ids` and `segments` per line.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, default_value_t = GbdtConfig::default().n_trees)]
    pub n_trees: usize,
    #[arg(long, default_value_t = GbdtConfig::default().max_depth)]
    pub max_depth: usize,
    #[arg(long, default_value_t = GbdtConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = GbdtConfig::default().min_samples_leaf)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = GbdtConfig::default().subsample)]
    pub subsample: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GraphQueryArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Query terms, matched as case-insensitive substrings of node labels.
    #[arg(required = true)]
    pub terms: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
}
