//! Movement classification from bilateral wrist trajectories.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::bank::PrototypeBank;
use super::knn::{knn_rank, Metric};
use super::{BaseToolError, PhonoPrediction, ToolResult};
use crate::datamodel::features::{distance, Point3};
use crate::datamodel::ComponentKind;

pub const MIN_FRAMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementConfig {
    /// Number of leading DFT bins kept per axis.
    pub dft_bins: usize,
}

impl Default for MovementConfig {
    fn default() -> Self {
        MovementConfig { dft_bins: 8 }
    }
}

impl MovementConfig {
    pub fn feature_dim(&self) -> usize {
        2 * 3 * self.dft_bins + 2 * 4
    }
}

/// Magnitudes of bins `0..bins` of the mean-removed signal, divided by its length.
/// Bins past the signal length are zero.
fn spectrum(signal: &[f64], bins: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = signal.len();
    // shift by the first sample before averaging so a constant signal is exactly zero
    let origin = signal[0];
    let mean = signal.iter().map(|v| v - origin).sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - origin - mean, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    (0..bins).map(|b| if b < n { buf[b].norm() / n as f64 } else { 0.0 }).collect()
}

/// Mean speed, peak speed, path length and straightness of one trajectory.
pub fn velocity_stats(traj: &[Point3], fps: f64) -> [f64; 4] {
    let steps: Vec<f64> = traj.windows(2).map(|w| distance(w[0], w[1])).collect();
    let path: f64 = steps.iter().sum();
    let peak = steps.iter().fold(0.0f64, |m, &s| m.max(s)) * fps;
    let mean = if steps.is_empty() { 0.0 } else { path / steps.len() as f64 * fps };
    let straightness = match (traj.first(), traj.last()) {
        (Some(&a), Some(&b)) if path > 0.0 => (distance(a, b) / path).min(1.0),
        _ => 0.0,
    };
    [mean, peak, path, straightness]
}

pub fn movement_feature(left: &[Point3], right: &[Point3], fps: f64, config: &MovementConfig) -> ToolResult<Vec<f64>> {
    let n = left.len();
    if right.len() != n {
        return Err(BaseToolError::MissingFeatures("wrist trajectories differ in length".into()));
    }
    if n < MIN_FRAMES {
        return Err(BaseToolError::TooShort { frames: n, needed: MIN_FRAMES });
    }
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(config.feature_dim());
    for traj in [left, right] {
        for axis in 0..3 {
            let signal: Vec<f64> = traj.iter().map(|p| p[axis]).collect();
            out.extend(spectrum(&signal, config.dft_bins, &mut planner));
        }
    }
    for traj in [left, right] {
        out.extend(velocity_stats(traj, fps));
    }
    Ok(out)
}

pub fn classify_movement(
    left: &[Point3],
    right: &[Point3],
    fps: f64,
    bank: &PrototypeBank,
    k: usize,
    config: &MovementConfig,
) -> ToolResult<PhonoPrediction> {
    if k == 0 {
        return Err(BaseToolError::InvalidK);
    }
    let feature = movement_feature(left, right, fps, config)?;
    let kb = bank.get(ComponentKind::Movement)?;
    if kb.dim != feature.len() {
        return Err(BaseToolError::InvalidBank(format!("movement: dim {} != feature dim {}", kb.dim, feature.len())));
    }
    Ok(PhonoPrediction::new(ComponentKind::Movement, knn_rank(&feature, &kb.prototypes, k, Metric::Cosine)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basetools::bank::{KindBank, Prototype};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FPS: f64 = 25.0;

    #[test]
    fn stationary_trajectory_is_all_zero() {
        let t = vec![[0.3, -0.2, 0.1]; 10];
        let f = movement_feature(&t, &t, FPS, &MovementConfig::default()).unwrap();
        assert_eq!(f.len(), 56);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_trajectory_is_straight() {
        let t: Vec<Point3> = (0..12).map(|i| [0.5 * i as f64, 0.0, 0.0]).collect();
        assert_eq!(velocity_stats(&t, FPS)[3], 1.0);
        let s = velocity_stats(&t, FPS);
        assert!((s[2] - 5.5).abs() < 1e-12);
        assert!((s[0] - 12.5).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        let t = vec![[0.0; 3]; 3];
        assert!(matches!(
            movement_feature(&t, &t, FPS, &MovementConfig::default()),
            Err(BaseToolError::TooShort { frames: 3, .. })
        ));
    }

    #[test]
    fn sinusoid_lands_in_its_bin() {
        // one full period over the window puts all energy in bin 1:
        // |X_1| = N/2 * A, so the normalised magnitude is A/2.
        let n = 32;
        let amp = 0.4;
        let right: Vec<Point3> = (0..n).map(|t| [amp * (2.0 * PI * t as f64 / n as f64).sin(), 0.0, 0.0]).collect();
        let left = vec![[0.0; 3]; n];
        let cfg = MovementConfig::default();
        let f = movement_feature(&left, &right, FPS, &cfg).unwrap();
        let rx = 3 * cfg.dft_bins;
        assert!((f[rx + 1] - amp / 2.0).abs() < 1e-12);
        for b in (0..cfg.dft_bins).filter(|&b| b != 1) {
            assert!(f[rx + b].abs() < 1e-12);
        }

        let mut oscillate = vec![0.0; cfg.feature_dim()];
        oscillate[rx + 1] = 1.0;
        let bank = PrototypeBank::new(
            [(
                ComponentKind::Movement,
                KindBank {
                    dim: cfg.feature_dim(),
                    prototypes: vec![
                        Prototype { label: "hold".into(), vector: vec![0.0; cfg.feature_dim()] },
                        Prototype { label: "oscillate".into(), vector: oscillate },
                    ],
                },
            )]
            .into(),
        )
        .unwrap();
        let p = classify_movement(&left, &right, FPS, &bank, 1, &cfg).unwrap();
        assert_eq!(p.top(), Some("oscillate"));
        let still = vec![[0.1, 0.1, 0.1]; n];
        assert_eq!(classify_movement(&still, &still, FPS, &bank, 1, &cfg).unwrap().top(), Some("hold"));
    }

    proptest! {
        #[test]
        fn translation_invariant(
            pts in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 4..40),
            shift in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let cfg = MovementConfig::default();
            let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
            let a = movement_feature(&pts, &pts, FPS, &cfg).unwrap();
            let b = movement_feature(&moved, &moved, FPS, &cfg).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()));
            }
        }
    }
}
