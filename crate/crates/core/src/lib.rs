//! Automated motion-annotation pipeline: segment sampling, camera-motion
//! filtering, detection and tracking orchestration over model services,
//! motion JSON assembly, caption and QA generation, and evaluation.
//!
//! All model inference sits behind the wire protocol in [`backends`];
//! [`backends::MockBackend`] replaces every service with scripted,
//! deterministic replies.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod backends;
pub mod camera;
pub mod detect;
pub mod evaluate;
pub mod generate;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod track;

pub use annotate::{MotionAnnotation, OverlayPlan};
pub use backends::{BackendClient, BackendError, CallPolicy, MockBackend, MockScript, Transport};
pub use generate::{Category, QAItem};
pub use model::*;
pub use pipeline::{curate, CurateConfig, CurateOptions};
