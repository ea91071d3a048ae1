//! Typed request/response messages for every model-service endpoint.
//!
//! On the wire a request is `{"id", "video_id"?, "endpoint", "payload"}` and
//! a response is `{"id", "payload"}` or `{"id", "error"}`.

use std::collections::BTreeMap;

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::annotate::OverlayPlan;
use crate::camera::CameraPose;
use crate::model::{ContactKind, HandSide, NormalizedBBox};
use crate::preprocess::{decode_png, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Describe,
    Ground,
    Persons,
    Pose,
    Hands,
    CameraPoses,
    TrackRegister,
    TrackAdvance,
    Llm,
    Judge,
    Answer,
}

impl Endpoint {
    pub const ALL: [Endpoint; 11] = [
        Endpoint::Describe,
        Endpoint::Ground,
        Endpoint::Persons,
        Endpoint::Pose,
        Endpoint::Hands,
        Endpoint::CameraPoses,
        Endpoint::TrackRegister,
        Endpoint::TrackAdvance,
        Endpoint::Llm,
        Endpoint::Judge,
        Endpoint::Answer,
    ];

    /// HTTP path of the endpoint.
    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Describe => "/describe",
            Endpoint::Ground => "/ground",
            Endpoint::Persons => "/persons",
            Endpoint::Pose => "/pose",
            Endpoint::Hands => "/hands",
            Endpoint::CameraPoses => "/camera_poses",
            Endpoint::TrackRegister => "/track/register",
            Endpoint::TrackAdvance => "/track/advance",
            Endpoint::Llm => "/llm",
            Endpoint::Judge => "/judge",
            Endpoint::Answer => "/answer",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Endpoint::Describe => "describe",
            Endpoint::Ground => "ground",
            Endpoint::Persons => "persons",
            Endpoint::Pose => "pose",
            Endpoint::Hands => "hands",
            Endpoint::CameraPoses => "camera_poses",
            Endpoint::TrackRegister => "track_register",
            Endpoint::TrackAdvance => "track_advance",
            Endpoint::Llm => "llm",
            Endpoint::Judge => "judge",
            Endpoint::Answer => "answer",
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the pixels of a frame travel: inline PNG, or a path on storage the
/// server shares with the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum FrameData {
    PngBase64 { data: String },
    Path { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    /// Segment-relative frame index.
    pub index: usize,
    /// Segment-relative timestamp in seconds.
    pub timestamp: f64,
    #[serde(flatten)]
    pub data: FrameData,
}

impl FrameRef {
    pub fn inline_png(index: usize, timestamp: f64, png: &[u8]) -> Self {
        Self {
            index,
            timestamp,
            data: FrameData::PngBase64 {
                data: base64::engine::general_purpose::STANDARD.encode(png),
            },
        }
    }

    pub fn decode(&self) -> Result<Raster, String> {
        let bytes = match &self.data {
            FrameData::PngBase64 { data } => base64::engine::general_purpose::STANDARD
                .decode(data)
                .map_err(|e| format!("frame {}: bad base64: {e}", self.index))?,
            FrameData::Path { path } => {
                std::fs::read(path).map_err(|e| format!("frame {}: {path}: {e}", self.index))?
            }
        };
        decode_png(&bytes).map_err(|e| format!("frame {}: {e}", self.index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub frame: FrameRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub frame: FrameRef,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRequest {
    pub frame: FrameRef,
    pub person_box: NormalizedBBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPosesRequest {
    pub frames: Vec<FrameRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRegisterRequest {
    pub session: String,
    pub frame: FrameRef,
    pub entity_id: u32,
    pub bbox: NormalizedBBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAdvanceRequest {
    pub session: String,
    pub frame: FrameRef,
}

/// Prompt for the text endpoints (`llm`, `judge`, `answer`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<OverlayPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl TextRequest {
    pub fn prompt(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            frames: Vec::new(),
            overlay: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestBody {
    Describe(FramePayload),
    Ground(GroundRequest),
    Persons(FramePayload),
    Pose(PoseRequest),
    Hands(FramePayload),
    CameraPoses(CameraPosesRequest),
    TrackRegister(TrackRegisterRequest),
    TrackAdvance(TrackAdvanceRequest),
    Llm(TextRequest),
    Judge(TextRequest),
    Answer(TextRequest),
}

impl RequestBody {
    pub fn endpoint(&self) -> Endpoint {
        match self {
            RequestBody::Describe(_) => Endpoint::Describe,
            RequestBody::Ground(_) => Endpoint::Ground,
            RequestBody::Persons(_) => Endpoint::Persons,
            RequestBody::Pose(_) => Endpoint::Pose,
            RequestBody::Hands(_) => Endpoint::Hands,
            RequestBody::CameraPoses(_) => Endpoint::CameraPoses,
            RequestBody::TrackRegister(_) => Endpoint::TrackRegister,
            RequestBody::TrackAdvance(_) => Endpoint::TrackAdvance,
            RequestBody::Llm(_) => Endpoint::Llm,
            RequestBody::Judge(_) => Endpoint::Judge,
            RequestBody::Answer(_) => Endpoint::Answer,
        }
    }

    pub fn payload(&self) -> Value {
        let v = match self {
            RequestBody::Describe(p) | RequestBody::Persons(p) | RequestBody::Hands(p) => serde_json::to_value(p),
            RequestBody::Ground(p) => serde_json::to_value(p),
            RequestBody::Pose(p) => serde_json::to_value(p),
            RequestBody::CameraPoses(p) => serde_json::to_value(p),
            RequestBody::TrackRegister(p) => serde_json::to_value(p),
            RequestBody::TrackAdvance(p) => serde_json::to_value(p),
            RequestBody::Llm(p) | RequestBody::Judge(p) | RequestBody::Answer(p) => serde_json::to_value(p),
        };
        v.expect("request payloads are plain data")
    }

    pub fn decode(endpoint: Endpoint, payload: Value) -> Result<Self, String> {
        let e = |err: serde_json::Error| format!("{endpoint} request: {err}");
        Ok(match endpoint {
            Endpoint::Describe => RequestBody::Describe(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Ground => RequestBody::Ground(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Persons => RequestBody::Persons(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Pose => RequestBody::Pose(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Hands => RequestBody::Hands(serde_json::from_value(payload).map_err(e)?),
            Endpoint::CameraPoses => RequestBody::CameraPoses(serde_json::from_value(payload).map_err(e)?),
            Endpoint::TrackRegister => RequestBody::TrackRegister(serde_json::from_value(payload).map_err(e)?),
            Endpoint::TrackAdvance => RequestBody::TrackAdvance(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Llm => RequestBody::Llm(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Judge => RequestBody::Judge(serde_json::from_value(payload).map_err(e)?),
            Endpoint::Answer => RequestBody::Answer(serde_json::from_value(payload).map_err(e)?),
        })
    }

    /// Segment-relative frame index the request is about, if single-frame.
    pub fn frame_index(&self) -> Option<usize> {
        match self {
            RequestBody::Describe(p) | RequestBody::Persons(p) | RequestBody::Hands(p) => Some(p.frame.index),
            RequestBody::Ground(p) => Some(p.frame.index),
            RequestBody::Pose(p) => Some(p.frame.index),
            RequestBody::TrackRegister(p) => Some(p.frame.index),
            RequestBody::TrackAdvance(p) => Some(p.frame.index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub id: String,
    pub video_id: Option<String>,
    pub body: RequestBody,
}

#[derive(Serialize, Deserialize)]
struct RawRequest {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    endpoint: Endpoint,
    payload: Value,
}

impl Serialize for WireRequest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawRequest {
            id: self.id.clone(),
            video_id: self.video_id.clone(),
            endpoint: self.body.endpoint(),
            payload: self.body.payload(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WireRequest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawRequest::deserialize(d)?;
        let body = RequestBody::decode(raw.endpoint, raw.payload).map_err(serde::de::Error::custom)?;
        Ok(WireRequest {
            id: raw.id,
            video_id: raw.video_id,
            body,
        })
    }
}

impl WireRequest {
    pub fn endpoint(&self) -> Endpoint {
        self.body.endpoint()
    }

    /// Content hash over endpoint, video and payload; the request id is
    /// excluded so replays match regardless of numbering.
    pub fn content_hash(&self) -> String {
        let v = serde_json::json!({
            "endpoint": self.endpoint(),
            "video_id": self.video_id,
            "payload": self.body.payload(),
        });
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("json")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireErrorKind {
    /// Worth retrying with the identical payload.
    Transient,
    Timeout,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: WireErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub id: String,
    pub outcome: Result<Value, WireError>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<WireError>,
}

impl Serialize for WireResponse {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (payload, error) = match &self.outcome {
            Ok(v) => (Some(v.clone()), None),
            Err(e) => (None, Some(e.clone())),
        };
        RawResponse {
            id: self.id.clone(),
            payload,
            error,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WireResponse {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawResponse::deserialize(d)?;
        let outcome = match (raw.payload, raw.error) {
            (Some(p), None) => Ok(p),
            (None, Some(e)) => Err(e),
            _ => return Err(serde::de::Error::custom("response needs exactly one of payload/error")),
        };
        Ok(WireResponse { id: raw.id, outcome })
    }
}

impl WireResponse {
    pub fn ok(id: impl Into<String>, payload: Value) -> Self {
        Self {
            id: id.into(),
            outcome: Ok(payload),
        }
    }

    pub fn err(id: impl Into<String>, kind: WireErrorKind, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            outcome: Err(WireError {
                kind,
                message: message.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: NormalizedBBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsResponse {
    pub detections: Vec<WireDetection>,
}

/// Keypoint in normalized frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Hand keypoints of one person: 21 per side, or empty when the side is
/// not estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseResponse {
    pub left_hand: Vec<Keypoint>,
    pub right_hand: Vec<Keypoint>,
}

pub const HAND_KEYPOINTS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHand {
    pub bbox: NormalizedBBox,
    pub side: HandSide,
    pub contact: ContactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_bbox: Option<NormalizedBBox>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandsResponse {
    pub hands: Vec<WireHand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPosesResponse {
    pub poses: Vec<CameraPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckResponse {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAdvanceResponse {
    pub frame_index: usize,
    /// Entity id → tight box, `null` when the tracker lost the entity.
    pub boxes: BTreeMap<u32, Option<NormalizedBBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<BTreeMap<u32, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Text(TextResponse),
    Detections(DetectionsResponse),
    Pose(PoseResponse),
    Hands(HandsResponse),
    CameraPoses(CameraPosesResponse),
    Ack(AckResponse),
    TrackAdvance(TrackAdvanceResponse),
}

fn unit(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name}={v} outside [0,1]"))
    }
}

impl ResponseBody {
    /// Parses and checks a payload against the schema of `request`'s
    /// endpoint. Any missing field or out-of-range value is an error; no
    /// partial results are produced.
    pub fn decode(request: &RequestBody, payload: Value) -> Result<Self, String> {
        fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        let body = match request.endpoint() {
            Endpoint::Describe | Endpoint::Llm | Endpoint::Judge | Endpoint::Answer => {
                ResponseBody::Text(parse(payload)?)
            }
            Endpoint::Ground | Endpoint::Persons => {
                let r: DetectionsResponse = parse(payload)?;
                for d in &r.detections {
                    unit("score", d.score)?;
                }
                ResponseBody::Detections(r)
            }
            Endpoint::Pose => {
                let r: PoseResponse = parse(payload)?;
                for (side, kps) in [("left_hand", &r.left_hand), ("right_hand", &r.right_hand)] {
                    if !kps.is_empty() && kps.len() != HAND_KEYPOINTS {
                        return Err(format!("{side}: {} keypoints, expected 0 or 21", kps.len()));
                    }
                    for k in kps {
                        unit("x", k.x)?;
                        unit("y", k.y)?;
                        unit("confidence", k.confidence)?;
                    }
                }
                ResponseBody::Pose(r)
            }
            Endpoint::Hands => {
                let r: HandsResponse = parse(payload)?;
                for h in &r.hands {
                    unit("score", h.score)?;
                    let holding = h.contact == ContactKind::ObjectContact;
                    if holding != h.object_bbox.is_some() {
                        return Err(format!(
                            "hand with contact {:?} has object_bbox={}",
                            h.contact,
                            h.object_bbox.is_some()
                        ));
                    }
                }
                ResponseBody::Hands(r)
            }
            Endpoint::CameraPoses => {
                let r: CameraPosesResponse = parse(payload)?;
                if let RequestBody::CameraPoses(req) = request {
                    if r.poses.len() != req.frames.len() {
                        return Err(format!("{} poses for {} frames", r.poses.len(), req.frames.len()));
                    }
                }
                ResponseBody::CameraPoses(r)
            }
            Endpoint::TrackRegister => ResponseBody::Ack(parse(payload)?),
            Endpoint::TrackAdvance => {
                let r: TrackAdvanceResponse = parse(payload)?;
                if let RequestBody::TrackAdvance(req) = request {
                    if r.frame_index != req.frame.index {
                        return Err(format!(
                            "advance answered frame {} for request frame {}",
                            r.frame_index, req.frame.index
                        ));
                    }
                }
                ResponseBody::TrackAdvance(r)
            }
        };
        Ok(body)
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            ResponseBody::Text(r) => serde_json::to_value(r),
            ResponseBody::Detections(r) => serde_json::to_value(r),
            ResponseBody::Pose(r) => serde_json::to_value(r),
            ResponseBody::Hands(r) => serde_json::to_value(r),
            ResponseBody::CameraPoses(r) => serde_json::to_value(r),
            ResponseBody::Ack(r) => serde_json::to_value(r),
            ResponseBody::TrackAdvance(r) => serde_json::to_value(r),
        };
        v.expect("response payloads are plain data")
    }
}
