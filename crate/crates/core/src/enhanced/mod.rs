//! Evidence collection with learned reranking, greedy visual clustering and
//! cluster-level phonological analysis.

pub mod cluster_phono;
pub mod clustering;
pub mod evidence;
pub mod gbdt;
pub mod phono_score;

use thiserror::Error;

use crate::basetools::BaseToolError;
use crate::datamodel::EmbeddingError;
use crate::knowledge::GraphError;

pub use cluster_phono::{analyze_clusters_phonology, jaccard, MergeRecommendation, OverlapConfig};
pub use clustering::{visual_id_gloss, Cluster, ClusterPartition, DEFAULT_TAU};
pub use evidence::{collect_gloss_evidence, EvidenceCandidate, EvidenceConfig, EvidenceContext, SegmentEvidence};
pub use gbdt::{train_ranker, Gbdt, GbdtConfig, GbdtError};
pub use phono_score::{score_phonological_agreement, PredictionSet};

#[derive(Debug, Error)]
pub enum EnhancedError {
    #[error("candidate has no canonical components")]
    EmptyPhonology,
    #[error("no trained ranker and bypass not requested")]
    RankerUntrained,
    #[error("no samples to cluster")]
    EmptyInput,
    #[error("duplicate sample key `{0}`")]
    DuplicateKey(String),
    #[error("unknown sample key `{0}`")]
    UnknownKey(String),
    #[error("threshold {0} outside (0, 2)")]
    InvalidThreshold(f64),
    #[error("cluster {0} has no members with predictions")]
    EmptyCluster(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Tool(#[from] BaseToolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ranker(#[from] GbdtError),
}

pub type EnhancedResult<T> = Result<T, EnhancedError>;
