//! Temporal segmentation into sign spans.
//!
//! With provided boundaries the spans are passed through unchanged. Otherwise
//! a smoothed wrist-speed signal is thresholded with hysteresis.

use serde::{Deserialize, Serialize};

use super::{BaseToolError, ToolResult};
use crate::datamodel::features::{distance, Hand};
use crate::datamodel::{Embedding, FrameSpan, SampleFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Centered moving-average window, in frames.
    pub window: usize,
    pub hi_factor: f64,
    pub lo_factor: f64,
    pub min_len: usize,
    /// Floor for the entry threshold so a static sample never triggers.
    pub min_speed: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig { window: 5, hi_factor: 1.5, lo_factor: 0.75, min_len: 6, min_speed: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    /// Frames in the span with at least one hand detected.
    pub hand_detection_count: usize,
    pub mean_wrist_speed: f64,
    pub peak_wrist_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub pooled_embedding: Embedding,
    pub activity: Activity,
}

impl Segment {
    pub fn span(&self) -> FrameSpan {
        FrameSpan::new(self.start_frame, self.end_frame)
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of frames with a hand detected.
    pub fn activity_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.activity.hand_detection_count as f64 / self.len() as f64
        }
    }
}

/// Per-frame speed of the faster wrist, in units per second.
pub fn wrist_speed(sample: &SampleFeatures) -> Vec<f64> {
    let f = &sample.frames;
    let n = f.len();
    let mut speed = vec![0.0; n];
    for t in 1..n {
        speed[t] = [Hand::Left, Hand::Right]
            .iter()
            .map(|h| distance(f.body[t][h.wrist_index()], f.body[t - 1][h.wrist_index()]))
            .fold(0.0f64, f64::max)
            * f.frame_rate;
    }
    if n > 1 {
        speed[0] = speed[1];
    }
    speed
}

/// Centered moving average; the window shrinks at the edges.
pub fn smooth(signal: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..signal.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(signal.len());
            signal[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub smoothed: Vec<f64>,
    pub theta_hi: f64,
    pub theta_lo: f64,
    pub spans: Vec<FrameSpan>,
}

/// Hysteresis over the smoothed signal: enter above `theta_hi`, stay while above `theta_lo`.
pub fn detect_spans(speed: &[f64], cfg: &SegmenterConfig) -> SpeedProfile {
    let smoothed = smooth(speed, cfg.window.max(1));
    let med = median(&smoothed);
    let theta_hi = (cfg.hi_factor * med).max(cfg.min_speed);
    let theta_lo = cfg.lo_factor * med;
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (t, &v) in smoothed.iter().enumerate() {
        match start {
            None if v > theta_hi => start = Some(t),
            Some(s) if v <= theta_lo => {
                spans.push(FrameSpan::new(s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(FrameSpan::new(s, smoothed.len()));
    }
    spans.retain(|s| s.len() >= cfg.min_len);
    SpeedProfile { smoothed, theta_hi, theta_lo, spans }
}

pub fn build_segment(sample: &SampleFeatures, span: FrameSpan, speed: &[f64]) -> ToolResult<Segment> {
    let n = sample.frame_count();
    if span.start_frame >= span.end_frame || span.end_frame > n {
        return Err(BaseToolError::InvalidSegment { start: span.start_frame, end: span.end_frame, frame_count: n });
    }
    let range = span.start_frame..span.end_frame;
    let f = &sample.frames;
    let hand_detection_count = range.clone().filter(|&t| f.left_hand[t].is_some() || f.right_hand[t].is_some()).count();
    let s = &speed[range.clone()];
    let activity = Activity {
        hand_detection_count,
        mean_wrist_speed: s.iter().sum::<f64>() / s.len() as f64,
        peak_wrist_speed: s.iter().fold(0.0f64, |m, &v| m.max(v)),
    };
    let pooled_embedding = Embedding::mean(&sample.embeddings[range])?;
    Ok(Segment { start_frame: span.start_frame, end_frame: span.end_frame, pooled_embedding, activity })
}

pub fn segment_signs(
    sample: &SampleFeatures,
    provided: Option<&[FrameSpan]>,
    cfg: &SegmenterConfig,
) -> ToolResult<Vec<Segment>> {
    if sample.frame_count() == 0 {
        return Err(BaseToolError::MissingFeatures("sample has no frames".into()));
    }
    let speed = wrist_speed(sample);
    let spans = match provided {
        Some(p) if !p.is_empty() => p.to_vec(),
        _ => {
            let profile = detect_spans(&speed, cfg);
            if profile.spans.is_empty() {
                return Err(BaseToolError::NoActiveSpans);
            }
            profile.spans
        }
    };
    spans.into_iter().map(|s| build_segment(sample, s, &speed)).collect()
}
