//! Temporal segment sampling and frame extraction.

mod decode;
mod raster;

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{
    DecodeError, DecoderRegistry, FrameDecoder, SceneObject, SyntheticDecoder, SyntheticScene, Y4mDecoder,
};
pub use raster::{color_regions, decode_png, encode_png, Raster, Region, Rgb};

use crate::model::{PipelineConfig, VideoMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("video {0} has no duration")]
    EmptyVideo(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Which part of a video is processed and which frames are decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    /// Segment start in seconds from the beginning of the source video.
    pub t_start: f64,
    /// Segment duration in seconds.
    pub t_s: f64,
    /// Source-video frame indices, one per tracking frame.
    pub frame_indices: Vec<u64>,
    /// Positions into `frame_indices` sampled on the caption-rate grid.
    pub caption_frame_indices: Vec<usize>,
}

impl SegmentPlan {
    pub fn frame_count(&self) -> usize {
        self.frame_indices.len()
    }
}

/// Start time and duration of the segment for given random draws. `t_s` and
/// `epsilon` are ignored for videos at or under the minimum segment length.
pub fn segment_from_draws(t_v: f64, min_len: f64, t_s: f64, epsilon: f64) -> (f64, f64) {
    if t_v <= min_len {
        return (0.0, t_v);
    }
    let t_mid = t_v / 2.0 - t_s / 2.0;
    let t_start = (t_v - t_s).min(t_mid + epsilon).max(0.0);
    (t_start, t_s)
}

/// Draws a segment: duration uniform in `[min, min(max, t_v)]`, start
/// jittered around the centered position and clamped into the video.
pub fn sample_segment<R: Rng + ?Sized>(
    meta: &VideoMeta,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<SegmentPlan, PreprocessError> {
    let t_v = meta.duration;
    if !(t_v > 0.0) || meta.frame_count == 0 {
        return Err(PreprocessError::EmptyVideo(meta.path.display().to_string()));
    }
    let (t_start, t_s) = if t_v <= cfg.segment_min_s {
        segment_from_draws(t_v, cfg.segment_min_s, t_v, 0.0)
    } else {
        let hi = cfg.segment_max_s.min(t_v);
        let t_s = rng.random_range(cfg.segment_min_s..=hi);
        let jitter = cfg.jitter_fraction * t_v;
        let eps = rng.random_range(-jitter..=jitter);
        segment_from_draws(t_v, cfg.segment_min_s, t_s, eps)
    };
    Ok(plan_frames(meta, cfg, t_start, t_s))
}

/// Native-rate frame indices inside the segment plus the caption grid.
pub fn plan_frames(meta: &VideoMeta, cfg: &PipelineConfig, t_start: f64, t_s: f64) -> SegmentPlan {
    let first = ((t_start * meta.fps).round() as u64).min(meta.frame_count.saturating_sub(1));
    let wanted = ((t_s * meta.fps).round() as u64).max(1);
    let n = wanted.min(meta.frame_count - first);
    let frame_indices: Vec<u64> = (first..first + n).collect();

    let grid = ((t_s * cfg.caption_fps + 1e-9).floor() as usize).max(1);
    let mut caption_frame_indices: Vec<usize> = (0..grid)
        .map(|k| {
            let t = (k as f64 + 0.5) / cfg.caption_fps;
            ((t * meta.fps).floor() as usize).min(n as usize - 1)
        })
        .collect();
    caption_frame_indices.dedup();
    SegmentPlan {
        t_start,
        t_s,
        frame_indices,
        caption_frame_indices,
    }
}

/// One decoded tracking frame. `index` and `timestamp` are segment-relative;
/// the timestamp is the midpoint of the frame interval.
#[derive(Debug)]
pub struct Frame {
    pub index: usize,
    pub source_index: u64,
    pub timestamp: f64,
    pub raster: Raster,
    png: OnceLock<Arc<Vec<u8>>>,
}

impl Frame {
    pub fn new(index: usize, source_index: u64, timestamp: f64, raster: Raster) -> Self {
        Self {
            index,
            source_index,
            timestamp,
            raster,
            png: OnceLock::new(),
        }
    }

    /// PNG bytes, encoded once and cached.
    pub fn png(&self) -> Arc<Vec<u8>> {
        self.png.get_or_init(|| Arc::new(encode_png(&self.raster))).clone()
    }
}

/// Decoded frames of one segment. Undecodable frames leave an empty slot and
/// are listed in `gaps`.
#[derive(Debug)]
pub struct FrameSet {
    pub meta: VideoMeta,
    pub plan: SegmentPlan,
    pub frames: Vec<Option<Frame>>,
    pub gaps: Vec<usize>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Frame> {
        self.frames.get(index).and_then(Option::as_ref)
    }

    pub fn caption_frames(&self) -> Vec<&Frame> {
        self.plan
            .caption_frame_indices
            .iter()
            .filter_map(|&i| self.get(i))
            .collect()
    }
}

pub fn extract_frames(
    decoder: &dyn FrameDecoder,
    path: &Path,
    meta: &VideoMeta,
    plan: &SegmentPlan,
) -> Result<FrameSet, PreprocessError> {
    let mut frames = Vec::with_capacity(plan.frame_count());
    let mut gaps = Vec::new();
    for (i, &src) in plan.frame_indices.iter().enumerate() {
        match decoder.decode(path, src) {
            Ok(raster) => {
                let ts = (i as f64 + 0.5) / meta.fps;
                frames.push(Some(Frame::new(i, src, ts, raster)));
            }
            Err(DecodeError::BadFrame { reason, .. }) => {
                log::warn!("{}: frame gap at {src}: {reason}", path.display());
                gaps.push(i);
                frames.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(FrameSet {
        meta: meta.clone(),
        plan: plan.clone(),
        frames,
        gaps,
    })
}
