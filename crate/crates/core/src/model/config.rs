use serde::{Deserialize, Serialize};

use super::ModelError;

/// How camera translations are rescaled before step lengths are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationNormalization {
    /// Rescale the trajectory so the mean consecutive step is 1.
    UnitMeanStep,
    /// Use the backend's translation units as-is.
    None,
}

/// Every threshold, weight and stride used by the pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segment_min_s: f64,
    pub segment_max_s: f64,
    /// Start jitter half-width as a fraction of video duration.
    pub jitter_fraction: f64,

    pub motion_alpha: f64,
    pub motion_beta: f64,
    pub motion_gamma: f64,
    pub motion_delta: f64,
    pub motion_threshold: f64,
    pub translation_normalization: TranslationNormalization,
    /// Upper bound on frames sent to the camera-pose backend.
    pub pose_sample_frames: usize,

    pub person_threshold: f64,
    pub hand_expansion: f64,
    pub keypoint_confidence_floor: f64,
    pub association_iou: f64,
    /// Same-label grounding boxes above this IoU collapse into one entity.
    pub object_dedup_iou: f64,

    pub keyframe_stride: usize,
    pub caption_fps: f64,

    pub hand_object_interaction_iou: f64,
    pub object_object_interaction_iou: f64,
    pub palette_size: usize,
    /// Ask the LLM for a category when no keyword rule fires.
    pub llm_category_fallback: bool,

    /// Prompt text budget; larger motion JSON is thinned by frame stride.
    pub max_prompt_chars: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_min_s: 5.0,
            segment_max_s: 10.0,
            jitter_fraction: 0.2,
            motion_alpha: 1.0,
            motion_beta: 1.0,
            motion_gamma: 0.5,
            motion_delta: 0.5,
            motion_threshold: 0.3,
            translation_normalization: TranslationNormalization::UnitMeanStep,
            pose_sample_frames: 16,
            person_threshold: 0.8,
            hand_expansion: 1.5,
            keypoint_confidence_floor: 0.3,
            association_iou: 0.3,
            object_dedup_iou: 0.9,
            keyframe_stride: 5,
            caption_fps: 2.0,
            hand_object_interaction_iou: 0.1,
            object_object_interaction_iou: 0.05,
            palette_size: 20,
            llm_category_fallback: false,
            max_prompt_chars: 200_000,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let unit = [
            ("jitter_fraction", self.jitter_fraction),
            ("person_threshold", self.person_threshold),
            ("keypoint_confidence_floor", self.keypoint_confidence_floor),
            ("association_iou", self.association_iou),
            ("object_dedup_iou", self.object_dedup_iou),
            ("hand_object_interaction_iou", self.hand_object_interaction_iou),
            ("object_object_interaction_iou", self.object_object_interaction_iou),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ModelError::InvalidConfig(format!("{name}={v} not in (0,1]")));
            }
        }
        if !(self.segment_min_s > 0.0 && self.segment_min_s <= self.segment_max_s) {
            return Err(ModelError::InvalidConfig(format!(
                "segment bounds ({}, {})",
                self.segment_min_s, self.segment_max_s
            )));
        }
        let weights = [
            self.motion_alpha,
            self.motion_beta,
            self.motion_gamma,
            self.motion_delta,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidConfig(format!("motion weights {weights:?}")));
        }
        if !(self.motion_threshold.is_finite() && self.motion_threshold > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "motion_threshold={}",
                self.motion_threshold
            )));
        }
        if self.hand_expansion < 1.0 {
            return Err(ModelError::InvalidConfig(format!(
                "hand_expansion={} below 1",
                self.hand_expansion
            )));
        }
        if self.keyframe_stride == 0 || self.pose_sample_frames < 2 || self.palette_size == 0 {
            return Err(ModelError::InvalidConfig(
                "keyframe_stride, palette_size must be ≥1 and pose_sample_frames ≥2".into(),
            ));
        }
        if !(self.caption_fps > 0.0) {
            return Err(ModelError::InvalidConfig(format!("caption_fps={}", self.caption_fps)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.motion_threshold, 0.3);
        assert_eq!(cfg.person_threshold, 0.8);
        assert_eq!(cfg.hand_expansion, 1.5);
        assert_eq!(cfg.keyframe_stride, 5);
    }

    #[test]
    fn rejects_out_of_range() {
        let cfg = PipelineConfig {
            association_iou: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: PipelineConfig = toml::from_str("motion_threshold = 0.5\nseed = 7").unwrap();
        assert_eq!(cfg.motion_threshold, 0.5);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.keyframe_stride, 5);
    }
}
