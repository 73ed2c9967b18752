//! Core domain types, feature-file codecs, manifests and record persistence.

pub mod codec;
pub mod dictionary;
pub mod embedding;
pub mod error;
pub mod features;
pub mod manifest;
pub mod phonology;
pub mod record;

pub use codec::{load_embedding_file, load_keypoint_file, write_embedding_file, write_keypoint_file, KeypointTrack};
pub use dictionary::{load_dictionary, write_dictionary, Dictionary, DictionaryEntry, Handedness};
pub use embedding::{cosine_distance, Embedding, EmbeddingError};
pub use error::{DataError, DataResult};
pub use features::{FrameFeatures, Hand, HandJoints, Point3, SampleFeatures};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, DatasetManifest, FeatureRefs, FrameSpan, SampleRecord,
};
pub use phonology::{ComponentKind, Phonology};
pub use record::{read_annotation_record, write_annotation_record, AnnotationRecord};
