//! JSON Lines dataset manifests.
//!
//! Each non-blank line is one [`SampleRecord`]. An optional first line of the
//! form `{"manifest": {"dictionary_ref": ..., "metadata": {...}}}` carries the
//! manifest-level fields. Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{load_embedding_file, load_keypoint_file, peek_embedding_header, peek_keypoint_header};
use super::error::{DataError, DataResult};
use super::features::{FrameFeatures, SampleFeatures, DEFAULT_FRAME_RATE};

/// Half-open frame interval `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl FrameSpan {
    pub fn new(start_frame: usize, end_frame: usize) -> Self {
        FrameSpan { start_frame, end_frame }
    }

    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRefs {
    /// Per-frame embeddings (`SGEMB1`).
    pub embeddings: PathBuf,
    /// Body + hand keypoints with hand-presence track (`SGKPT1`).
    pub keypoints: PathBuf,
    /// Optional independent embedding used only for clustering evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_embedding: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gloss_label: Option<String>,
    /// Evaluation subset tag (for example a video-quality bucket).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<FrameSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
    pub feature_refs: FeatureRefs,
}

impl SampleRecord {
    pub fn frame_rate(&self) -> f64 {
        self.frame_rate.unwrap_or(DEFAULT_FRAME_RATE)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<SampleRecord>,
    pub dictionary_ref: Option<PathBuf>,
    pub metadata: BTreeMap<String, String>,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
struct HeaderLine {
    manifest: ManifestHeader,
}

impl DatasetManifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn dictionary_path(&self) -> Option<PathBuf> {
        self.dictionary_ref.as_deref().map(|p| self.resolve(p))
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Validates every invariant that can be checked without decoding payloads.
    pub fn validate(&self) -> DataResult<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if s.sample_id.is_empty() {
                return Err(DataError::InvalidSample("empty sample_id".into()));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(DataError::DuplicateSampleId(s.sample_id.clone()));
            }
            if let Some(fr) = s.frame_rate {
                if !(fr.is_finite() && fr > 0.0) {
                    return Err(DataError::InvalidSample(format!("`{}`: frame rate must be > 0", s.sample_id)));
                }
            }
            let (emb_count, _) = peek_embedding_header(&self.resolve(&s.feature_refs.embeddings))?;
            let (kpt_count, _) = peek_keypoint_header(&self.resolve(&s.feature_refs.keypoints))?;
            if emb_count != kpt_count {
                return Err(DataError::FrameCountMismatch {
                    sample_id: s.sample_id.clone(),
                    detail: format!("{emb_count} embeddings vs {kpt_count} keypoint frames"),
                });
            }
            if let Some(eval) = &s.feature_refs.eval_embedding {
                peek_embedding_header(&self.resolve(eval))?;
            }
            for span in s.segments.iter().flatten() {
                if span.start_frame >= span.end_frame || span.end_frame > kpt_count {
                    return Err(DataError::InvalidSegment {
                        sample_id: s.sample_id.clone(),
                        start: span.start_frame,
                        end: span.end_frame,
                        frame_count: kpt_count,
                    });
                }
            }
        }
        if let Some(dict) = self.dictionary_path() {
            if !dict.exists() {
                return Err(DataError::MissingDictionary(dict));
            }
        }
        Ok(())
    }

    /// Decodes the feature files of one sample.
    pub fn load_features(&self, sample: &SampleRecord) -> DataResult<SampleFeatures> {
        let embeddings = load_embedding_file(&self.resolve(&sample.feature_refs.embeddings))?;
        let track = load_keypoint_file(&self.resolve(&sample.feature_refs.keypoints))?;
        let frames = FrameFeatures::from_track(&track, sample.frame_rate())?;
        SampleFeatures::new(sample.sample_id.clone(), frames, embeddings)
    }

    pub fn load_eval_embedding(&self, sample: &SampleRecord) -> DataResult<Option<super::Embedding>> {
        match &sample.feature_refs.eval_embedding {
            None => Ok(None),
            Some(p) => {
                let mut embs = load_embedding_file(&self.resolve(p))?;
                if embs.len() != 1 {
                    return Err(DataError::InvalidEmbedding(format!(
                        "eval embedding file for `{}` holds {} vectors, expected 1",
                        sample.sample_id,
                        embs.len()
                    )));
                }
                Ok(embs.pop())
            }
        }
    }
}

/// Loads and eagerly validates a JSON Lines manifest.
pub fn load_manifest(path: &Path) -> DataResult<DatasetManifest> {
    let manifest = parse_manifest(path)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Parses a manifest without touching feature files (uniqueness is still checked).
pub fn parse_manifest(path: &Path) -> DataResult<DatasetManifest> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = DatasetManifest { base_dir, ..Default::default() };
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
        if value.get("manifest").is_some() && value.get("sample_id").is_none() {
            let header: HeaderLine = serde_json::from_value(value)
                .map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
            manifest.dictionary_ref = header.manifest.dictionary_ref;
            manifest.metadata = header.manifest.metadata;
            continue;
        }
        let record: SampleRecord =
            serde_json::from_value(value).map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(DataError::DuplicateSampleId(record.sample_id));
        }
        manifest.samples.push(record);
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> DataResult<()> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| DataError::io(path, e);
    if manifest.dictionary_ref.is_some() || !manifest.metadata.is_empty() {
        let header = serde_json::json!({
            "manifest": ManifestHeader {
                dictionary_ref: manifest.dictionary_ref.clone(),
                metadata: manifest.metadata.clone(),
            }
        });
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    }
    for s in &manifest.samples {
        writeln!(w, "{}", serde_json::to_string(s)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::codec::{write_embedding_file, write_keypoint_file, KeypointTrack};
    use crate::datamodel::features::POINTS_PER_FRAME;
    use crate::datamodel::Embedding;

    fn write_features(dir: &Path, id: &str, frames: usize) {
        let embs = vec![Embedding::new(vec![1.0, 0.0]).unwrap(); frames];
        write_embedding_file(&dir.join(format!("{id}.emb")), &embs).unwrap();
        let track = KeypointTrack {
            frame_count: frames,
            point_count: POINTS_PER_FRAME,
            coords: vec![0.0; frames * POINTS_PER_FRAME * 3],
            presence: vec![[false, true]; frames],
        };
        write_keypoint_file(&dir.join(format!("{id}.kpt")), &track).unwrap();
    }

    fn line(id: &str) -> String {
        format!(
            r#"{{"sample_id":"{id}","sentence":"hello","feature_refs":{{"embeddings":"{id}.emb","keypoints":"{id}.kpt"}}}}"#
        )
    }

    #[test]
    fn loads_two_samples() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), "s1", 4);
        write_features(dir.path(), "s2", 4);
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, format!("{}\n{}\n", line("s1"), line("s2"))).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.samples.len(), 2);
        let f = m.load_features(&m.samples[0]).unwrap();
        assert_eq!(f.frame_count(), 4);
    }

    #[test]
    fn empty_file_is_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().samples.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, format!("{}\n{}\n", line("s1"), line("s1"))).unwrap();
        match load_manifest(&path) {
            Err(DataError::DuplicateSampleId(id)) => assert_eq!(id, "s1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, format!("{}\n{{not json\n", line("s1"))).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_feature_file_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, line("s1")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MissingFeatureFile(_))));

        write_features(dir.path(), "s1", 4);
        let embs = vec![Embedding::new(vec![1.0]).unwrap(); 3];
        write_embedding_file(&dir.path().join("s1.emb"), &embs).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::FrameCountMismatch { .. })));
    }

    #[test]
    fn out_of_range_segment_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), "s1", 4);
        let path = dir.path().join("m.jsonl");
        let l = line("s1")
            .replace(r#""sentence":"hello","#, r#""sentence":"hello","segments":[{"start_frame":2,"end_frame":9}],"#);
        std::fs::write(&path, l).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::InvalidSegment { .. })));
    }

    #[test]
    fn manifest_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        write_features(dir.path(), "a", 3);
        std::fs::write(dir.path().join("dict.json"), "[]").unwrap();
        let mut metadata = BTreeMap::new();
        metadata.insert("corpus".to_string(), "synthetic".to_string());
        let m = DatasetManifest {
            samples: vec![SampleRecord {
                sample_id: "a".into(),
                sentence: Some("x y".into()),
                gloss_label: Some("G".into()),
                subset: None,
                segments: Some(vec![FrameSpan::new(0, 2)]),
                frame_rate: Some(30.0),
                feature_refs: FeatureRefs {
                    embeddings: "a.emb".into(),
                    keypoints: "a.kpt".into(),
                    eval_embedding: None,
                },
            }],
            dictionary_ref: Some("dict.json".into()),
            metadata,
            base_dir: dir.path().to_path_buf(),
        };
        let path = dir.path().join("out.jsonl");
        write_manifest(&path, &m).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }
}
