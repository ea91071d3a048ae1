//! Camera ego-motion scoring from backend camera poses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PipelineConfig, TranslationNormalization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("need at least 2 poses, got {0}")]
    InsufficientPoses(usize),
    #[error("pose {index}: {reason}")]
    InvalidPose { index: usize, reason: String },
}

const ORTHO_TOL: f64 = 1e-6;

/// Camera-to-world pose. Rotation is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation by `angle` radians about the vertical (y) axis.
    pub fn yaw(angle: f64, translation: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let r = &self.rotation;
        if r.iter()
            .flatten()
            .chain(self.translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err("non-finite entry".into());
        }
        let rrt = matmul(r, &transpose(r));
        for (i, row) in rrt.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (v - want).abs() > ORTHO_TOL {
                    return Err(format!("R·Rᵀ[{i}][{j}] = {v}"));
                }
            }
        }
        let d = det(r);
        if (d - 1.0).abs() > ORTHO_TOL {
            return Err(format!("det(R) = {d}"));
        }
        Ok(())
    }

    /// `self` composed after `other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        let rotation = matmul(&self.rotation, &other.rotation);
        let mut translation = self.translation;
        for (i, t) in translation.iter_mut().enumerate() {
            *t += (0..3).map(|k| self.rotation[i][k] * other.translation[k]).sum::<f64>();
        }
        CameraPose { rotation, translation }
    }
}

/// Per-consecutive-pair translation and rotation changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDeltas {
    translation: Vec<f64>,
    rotation: Vec<f64>,
}

impl PoseDeltas {
    /// Both series must be non-empty and equally long.
    pub fn new(translation: Vec<f64>, rotation: Vec<f64>) -> Option<Self> {
        (!translation.is_empty() && translation.len() == rotation.len()).then_some(Self { translation, rotation })
    }

    pub fn translation(&self) -> &[f64] {
        &self.translation
    }

    /// Radians, each in `[0, π]`.
    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }
}

/// Geodesic angle between two rotations.
fn relative_angle(a: &Mat3, b: &Mat3) -> f64 {
    let rel = matmul(&transpose(a), b);
    let trace = rel[0][0] + rel[1][1] + rel[2][2];
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn pose_deltas(poses: &[CameraPose], mode: TranslationNormalization) -> Result<PoseDeltas, CameraError> {
    if poses.len() < 2 {
        return Err(CameraError::InsufficientPoses(poses.len()));
    }
    for (index, p) in poses.iter().enumerate() {
        p.validate()
            .map_err(|reason| CameraError::InvalidPose { index, reason })?;
    }
    let mut translation: Vec<f64> = poses
        .windows(2)
        .map(|w| {
            (0..3)
                .map(|k| (w[1].translation[k] - w[0].translation[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if mode == TranslationNormalization::UnitMeanStep {
        let mean = translation.iter().sum::<f64>() / translation.len() as f64;
        if mean > 1e-12 {
            translation.iter_mut().for_each(|d| *d /= mean);
        } else {
            translation.iter_mut().for_each(|d| *d = 0.0);
        }
    }
    let rotation = poses
        .windows(2)
        .map(|w| relative_angle(&w[0].rotation, &w[1].rotation))
        .collect();
    Ok(PoseDeltas { translation, rotation })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `α·mean(Δt) + β·mean(Δr) + γ·max(Δt) + δ·max(Δr)`.
pub fn motion_score(deltas: &PoseDeltas, cfg: &PipelineConfig) -> f64 {
    cfg.motion_alpha * mean(&deltas.translation)
        + cfg.motion_beta * mean(&deltas.rotation)
        + cfg.motion_gamma * max(&deltas.translation)
        + cfg.motion_delta * max(&deltas.rotation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    pub translation_deltas: Vec<f64>,
    pub rotation_deltas: Vec<f64>,
    pub score: f64,
    pub excluded: bool,
}

/// Scores the camera trajectory; videos strictly above the threshold are
/// excluded.
pub fn filter_video(poses: &[CameraPose], cfg: &PipelineConfig) -> Result<MotionReport, CameraError> {
    let deltas = pose_deltas(poses, cfg.translation_normalization)?;
    let score = motion_score(&deltas, cfg);
    Ok(MotionReport {
        excluded: score > cfg.motion_threshold,
        score,
        translation_deltas: deltas.translation,
        rotation_deltas: deltas.rotation,
    })
}

/// Up to `max` evenly spaced positions in `0..n`, first and last included.
pub fn pose_sample_positions(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = (0..max)
        .map(|i| ((i * (n - 1)) as f64 / (max - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}
