//! Per-frame body and hand keypoints.

use serde::{Deserialize, Serialize};

use super::codec::KeypointTrack;
use super::embedding::Embedding;
use super::error::{DataError, DataResult};

pub type Point3 = [f64; 3];

/// Joints per hand (wrist, then four joints per finger).
pub const HAND_JOINTS: usize = 21;
pub type HandJoints = [Point3; HAND_JOINTS];

/// Body landmark layout of keypoint files; hand joints follow (left, then right).
pub mod body {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const LEFT_SHOULDER: usize = 2;
    pub const RIGHT_SHOULDER: usize = 3;
    pub const LEFT_ELBOW: usize = 4;
    pub const RIGHT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const RIGHT_WRIST: usize = 7;
    pub const MID_HIP: usize = 8;
    pub const COUNT: usize = 9;
}

pub const POINTS_PER_FRAME: usize = body::COUNT + 2 * HAND_JOINTS;
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn wrist_index(self) -> usize {
        match self {
            Hand::Left => body::LEFT_WRIST,
            Hand::Right => body::RIGHT_WRIST,
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

pub type BodyFrame = [Point3; body::COUNT];

/// Decoded keypoint streams of one sample; every per-frame array has one length.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub body: Vec<BodyFrame>,
    pub left_hand: Vec<Option<HandJoints>>,
    pub right_hand: Vec<Option<HandJoints>>,
    pub frame_rate: f64,
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

impl FrameFeatures {
    pub fn from_track(track: &KeypointTrack, frame_rate: f64) -> DataResult<Self> {
        if track.point_count != POINTS_PER_FRAME {
            return Err(DataError::InvalidSample(format!(
                "keypoint file has {} points per frame, expected {POINTS_PER_FRAME}",
                track.point_count
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(DataError::InvalidSample(format!("frame rate {frame_rate} must be > 0")));
        }
        let to_p = |f: usize, p: usize| {
            let v = track.point(f, p);
            [v[0] as f64, v[1] as f64, v[2] as f64]
        };
        let hand = |f: usize, offset: usize| -> HandJoints { std::array::from_fn(|j| to_p(f, offset + j)) };
        let mut out = FrameFeatures {
            body: Vec::with_capacity(track.frame_count),
            left_hand: Vec::with_capacity(track.frame_count),
            right_hand: Vec::with_capacity(track.frame_count),
            frame_rate,
        };
        for f in 0..track.frame_count {
            out.body.push(std::array::from_fn(|p| to_p(f, p)));
            let [l, r] = track.presence[f];
            out.left_hand.push(l.then(|| hand(f, body::COUNT)));
            out.right_hand.push(r.then(|| hand(f, body::COUNT + HAND_JOINTS)));
        }
        Ok(out)
    }

    pub fn to_track(&self) -> KeypointTrack {
        let mut coords = Vec::with_capacity(self.len() * POINTS_PER_FRAME * 3);
        let mut presence = Vec::with_capacity(self.len());
        let zero: HandJoints = [[0.0; 3]; HAND_JOINTS];
        for f in 0..self.len() {
            let mut push = |p: &Point3| coords.extend(p.iter().map(|&v| v as f32));
            self.body[f].iter().for_each(&mut push);
            self.left_hand[f].as_ref().unwrap_or(&zero).iter().for_each(&mut push);
            self.right_hand[f].as_ref().unwrap_or(&zero).iter().for_each(&mut push);
            presence.push([self.left_hand[f].is_some(), self.right_hand[f].is_some()]);
        }
        KeypointTrack { frame_count: self.len(), point_count: POINTS_PER_FRAME, coords, presence }
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn hand(&self, hand: Hand) -> &[Option<HandJoints>] {
        match hand {
            Hand::Left => &self.left_hand,
            Hand::Right => &self.right_hand,
        }
    }

    pub fn hand_present(&self, hand: Hand, frame: usize) -> bool {
        self.hand(hand)[frame].is_some()
    }

    pub fn wrist_trajectory(&self, hand: Hand) -> Vec<Point3> {
        self.body.iter().map(|b| b[hand.wrist_index()]).collect()
    }

    /// Frames `[start, end)` as an owned slice of the sample.
    pub fn slice(&self, start: usize, end: usize) -> FrameFeatures {
        FrameFeatures {
            body: self.body[start..end].to_vec(),
            left_hand: self.left_hand[start..end].to_vec(),
            right_hand: self.right_hand[start..end].to_vec(),
            frame_rate: self.frame_rate,
        }
    }

    pub fn validate(&self) -> DataResult<()> {
        let n = self.body.len();
        if self.left_hand.len() != n || self.right_hand.len() != n {
            return Err(DataError::InvalidSample("per-frame arrays differ in length".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(DataError::InvalidSample("frame rate must be > 0".into()));
        }
        let finite = |p: &Point3| p.iter().all(|v| v.is_finite());
        let hands_ok = |h: &Option<HandJoints>| h.as_ref().is_none_or(|j| j.iter().all(finite));
        if !self.body.iter().all(|b| b.iter().all(finite))
            || !self.left_hand.iter().all(hands_ok)
            || !self.right_hand.iter().all(hands_ok)
        {
            return Err(DataError::InvalidSample("non-finite keypoint coordinate".into()));
        }
        Ok(())
    }

    /// Re-expresses every point relative to the mid-shoulder, scaled by shoulder width.
    pub fn to_signer_centric(&self) -> DataResult<FrameFeatures> {
        let mut out = self.clone();
        for f in 0..self.len() {
            let ls = self.body[f][body::LEFT_SHOULDER];
            let rs = self.body[f][body::RIGHT_SHOULDER];
            let origin = [(ls[0] + rs[0]) / 2.0, (ls[1] + rs[1]) / 2.0, (ls[2] + rs[2]) / 2.0];
            let width = distance(ls, rs);
            if width <= f64::EPSILON {
                return Err(DataError::InvalidSample(format!("frame {f}: shoulders coincide, cannot normalise")));
            }
            let map = |p: Point3| {
                let d = sub(p, origin);
                [d[0] / width, d[1] / width, d[2] / width]
            };
            for p in out.body[f].iter_mut() {
                *p = map(*p);
            }
            for joints in [&mut out.left_hand[f], &mut out.right_hand[f]].into_iter().flatten() {
                for p in joints.iter_mut() {
                    *p = map(*p);
                }
            }
        }
        Ok(out)
    }
}

/// Everything the tools need for one sample.
#[derive(Debug, Clone)]
pub struct SampleFeatures {
    pub sample_id: String,
    pub frames: FrameFeatures,
    /// One embedding per frame.
    pub embeddings: Vec<Embedding>,
}

impl SampleFeatures {
    pub fn new(sample_id: impl Into<String>, frames: FrameFeatures, embeddings: Vec<Embedding>) -> DataResult<Self> {
        let sample_id = sample_id.into();
        frames.validate()?;
        if embeddings.len() != frames.len() {
            return Err(DataError::FrameCountMismatch {
                sample_id,
                detail: format!("{} embeddings vs {} keypoint frames", embeddings.len(), frames.len()),
            });
        }
        if let Some(first) = embeddings.first() {
            if embeddings.iter().any(|e| e.dim() != first.dim()) {
                return Err(DataError::InvalidEmbedding("per-frame embeddings differ in dimension".into()));
            }
        }
        Ok(SampleFeatures { sample_id, frames, embeddings })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Temporally averaged representation of the whole sample.
    pub fn video_embedding(&self) -> Result<Embedding, super::embedding::EmbeddingError> {
        Embedding::mean(&self.embeddings)
    }
}
