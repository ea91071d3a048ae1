//! Domain types shared by every pipeline stage: boxes, entity IDs,
//! tracklets, contact states, video metadata and the pipeline config.

mod bbox;
mod config;
mod ids;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbox::{iou, normalize_bbox, NormalizedBBox, PixelBox};
pub use config::{PipelineConfig, TranslationNormalization};
pub use ids::{
    allocate_entity_ids, EntityId, EntityKind, HandSide, IdAssignment, ObjectIdAllocator, PersonIds, PersonRoot,
    MAX_PERSONS, OBJECT_ID_BASE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("ID range exceeded: {0}")]
    IdRangeExceeded(String),
    #[error("duplicate person root {0}")]
    DuplicateRoot(u32),
    #[error("invalid entity id {0}")]
    InvalidEntityId(String),
    #[error("invalid contact state: {0}")]
    InvalidContact(String),
    #[error("invalid video metadata: {0}")]
    InvalidVideo(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    NoContact,
    SelfContact,
    ObjectContact,
    OtherContact,
}

/// Per-hand contact classification. The held-object box is present exactly
/// when the hand is in object contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContactRepr", into = "ContactRepr")]
pub struct ContactState {
    value: ContactKind,
    held_object_box: Option<NormalizedBBox>,
}

impl ContactState {
    pub fn new(value: ContactKind, held_object_box: Option<NormalizedBBox>) -> Result<Self, ModelError> {
        match (value, held_object_box.is_some()) {
            (ContactKind::ObjectContact, false) => Err(ModelError::InvalidContact(
                "object_contact requires a held-object box".into(),
            )),
            (ContactKind::ObjectContact, true) | (_, false) => Ok(Self { value, held_object_box }),
            (other, true) => Err(ModelError::InvalidContact(format!(
                "{other:?} cannot carry a held-object box"
            ))),
        }
    }

    pub fn none() -> Self {
        Self {
            value: ContactKind::NoContact,
            held_object_box: None,
        }
    }

    pub fn holding(object: NormalizedBBox) -> Self {
        Self {
            value: ContactKind::ObjectContact,
            held_object_box: Some(object),
        }
    }

    pub fn value(&self) -> ContactKind {
        self.value
    }

    pub fn held_object_box(&self) -> Option<NormalizedBBox> {
        self.held_object_box
    }
}

#[derive(Serialize, Deserialize)]
struct ContactRepr {
    state: ContactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_box: Option<NormalizedBBox>,
}

impl TryFrom<ContactRepr> for ContactState {
    type Error = ModelError;
    fn try_from(r: ContactRepr) -> Result<Self, Self::Error> {
        ContactState::new(r.state, r.object_box)
    }
}

impl From<ContactState> for ContactRepr {
    fn from(c: ContactState) -> Self {
        ContactRepr {
            state: c.value,
            object_box: c.held_object_box,
        }
    }
}

/// One entity's per-frame boxes over a segment. `None` means not detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: EntityId,
    pub object_type: String,
    pub boxes: Vec<Option<NormalizedBBox>>,
    /// Present only for hand entities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_states: Option<Vec<Option<ContactState>>>,
}

impl Tracklet {
    pub fn frame_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn box_at(&self, frame: usize) -> Option<NormalizedBBox> {
        self.boxes.get(frame).copied().flatten()
    }

    pub fn contact_at(&self, frame: usize) -> Option<ContactState> {
        self.contact_states
            .as_ref()
            .and_then(|c| c.get(frame).copied().flatten())
    }

    pub fn first_appearance(&self) -> Option<usize> {
        self.boxes.iter().position(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Duration in seconds.
    pub duration: f64,
    pub frame_count: u64,
}

impl VideoMeta {
    pub fn new(
        path: PathBuf,
        width: u32,
        height: u32,
        fps: f64,
        duration: f64,
        frame_count: u64,
    ) -> Result<Self, ModelError> {
        let meta = Self {
            path,
            width,
            height,
            fps,
            duration,
            frame_count,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::InvalidVideo(format!(
                "frame size {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ModelError::InvalidVideo(format!("fps {}", self.fps)));
        }
        if !self.duration.is_finite() || self.duration < 0.0 {
            return Err(ModelError::InvalidVideo(format!("duration {}", self.duration)));
        }
        let expected = (self.fps * self.duration).round();
        if (self.frame_count as f64 - expected).abs() > 1.0 {
            return Err(ModelError::InvalidVideo(format!(
                "frame_count {} inconsistent with fps×duration ≈ {expected}",
                self.frame_count
            )));
        }
        Ok(())
    }
}
