//! Scripted stand-ins for every model service.
//!
//! A script maps each endpoint to, in lookup order, responses keyed by
//! request hash, an ordered reply sequence, and a generator rule. When all
//! three are used up the mock returns [`BackendError::ScriptExhausted`]
//! instead of inventing an answer. Rules read the synthetic rasters sent in
//! requests (flat colored rectangles), so a scene description plus a color
//! legend is enough to drive the whole pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::protocol::*;
use super::{BackendError, Transport};
use crate::camera::CameraPose;
use crate::model::{iou, ContactKind, HandSide, NormalizedBBox};
use crate::preprocess::{color_regions, Raster, Region, Rgb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedReply {
    Ok(Value),
    Error(WireError),
}

impl ScriptedReply {
    pub fn transient(message: &str) -> Self {
        ScriptedReply::Error(WireError {
            kind: WireErrorKind::Transient,
            message: message.into(),
        })
    }

    fn into_response(self, id: &str) -> WireResponse {
        match self {
            ScriptedReply::Ok(v) => WireResponse::ok(id, v),
            ScriptedReply::Error(e) => WireResponse {
                id: id.into(),
                outcome: Err(e),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCase {
    pub contains: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandColor {
    pub color: Rgb,
    pub side: HandSide,
    pub contact: ContactKind,
    /// Color of the held object, required for `object_contact`.
    #[serde(default)]
    pub object_color: Option<Rgb>,
    #[serde(default = "default_score")]
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    /// Boxes stay at their registered position (plus velocity).
    Echo,
    /// Boxes follow the registered region's color in each frame.
    ColorFollow,
}

fn default_score() -> f64 {
    0.9
}

fn default_min_pixels() -> usize {
    4
}

/// Generator rules. Text placeholders: `{video_id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockRule {
    /// Constant reply for text endpoints.
    Text { text: String },
    /// First case whose `contains` occurs in the prompt wins.
    Match {
        cases: Vec<MatchCase>,
        #[serde(default)]
        default: Option<String>,
    },
    /// Boxes of connected regions painted in a class's colors. For `ground`
    /// the requested class is looked up; for `persons` every class counts.
    ColorBoxes {
        classes: BTreeMap<String, Vec<Rgb>>,
        #[serde(default = "default_score")]
        score: f64,
        #[serde(default = "default_min_pixels")]
        min_pixels: usize,
    },
    /// 21 keypoints per side spread over a sub-rectangle of the person box,
    /// given as `[left, top, right, bottom]` fractions of that box.
    HandKeypoints {
        #[serde(default)]
        left: Option<[f64; 4]>,
        #[serde(default)]
        right: Option<[f64; 4]>,
        #[serde(default = "default_score")]
        confidence: f64,
    },
    /// Hands found by color, each with a fixed side and contact state.
    ColorHands {
        hands: Vec<HandColor>,
        #[serde(default = "default_min_pixels")]
        min_pixels: usize,
    },
    /// Pose at frame `i` is a yaw of `i·yaw_step` and a translation of
    /// `i·translation_step`.
    CameraTrajectory {
        #[serde(default)]
        translation_step: [f64; 3],
        #[serde(default)]
        yaw_step: f64,
    },
    /// Serves both tracker endpoints. `velocity` is added per frame since
    /// registration; `lose` maps entity id to the frame it disappears at.
    Tracker {
        mode: TrackerMode,
        #[serde(default)]
        velocity: [f64; 2],
        #[serde(default)]
        lose: BTreeMap<u32, usize>,
    },
    /// Every call fails with this error.
    Fail { error: WireError },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointScript {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_hash: BTreeMap<String, ScriptedReply>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequence: Vec<ScriptedReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<MockRule>,
}

impl EndpointScript {
    pub fn rule(rule: MockRule) -> Self {
        Self {
            rule: Some(rule),
            ..Default::default()
        }
    }
}

/// Endpoint scripts, with optional per-video overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(flatten)]
    pub endpoints: BTreeMap<Endpoint, EndpointScript>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_video: BTreeMap<String, BTreeMap<Endpoint, EndpointScript>>,
}

impl MockScript {
    /// Merges every `*.json` file in `dir`, in file-name order. An endpoint
    /// defined twice is an error.
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut merged = MockScript::default();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| format!("{}: {e}", f.display()))?;
            let part: MockScript = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", f.display()))?;
            merged.merge(part).map_err(|e| format!("{}: {e}", f.display()))?;
        }
        Ok(merged)
    }

    pub fn merge(&mut self, other: MockScript) -> Result<(), String> {
        for (ep, s) in other.endpoints {
            if self.endpoints.insert(ep, s).is_some() {
                return Err(format!("endpoint {ep} scripted twice"));
            }
        }
        for (video, eps) in other.per_video {
            let slot = self.per_video.entry(video.clone()).or_default();
            for (ep, s) in eps {
                if slot.insert(ep, s).is_some() {
                    return Err(format!("endpoint {ep} scripted twice for video {video}"));
                }
            }
        }
        Ok(())
    }
}

/// What the mock saw, for assertions on call patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub endpoint: Endpoint,
    pub video_id: Option<String>,
    pub frame_index: Option<usize>,
    pub class_name: Option<String>,
    pub request_hash: String,
}

#[derive(Debug, Clone)]
struct Anchor {
    frame: usize,
    bbox: NormalizedBBox,
    color: Option<Rgb>,
    last: Option<NormalizedBBox>,
}

#[derive(Default)]
struct MockState {
    cursors: HashMap<(Option<String>, Endpoint), usize>,
    sessions: HashMap<String, BTreeMap<u32, Anchor>>,
    log: Vec<CallRecord>,
}

pub struct MockBackend {
    script: MockScript,
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            state: Mutex::new(MockState::default()),
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.state.lock().unwrap().log.clone()
    }

    fn endpoint_script(&self, video: Option<&str>, endpoint: Endpoint) -> Option<(bool, &EndpointScript)> {
        if let Some(s) = video
            .and_then(|v| self.script.per_video.get(v))
            .and_then(|m| m.get(&endpoint))
        {
            return Some((true, s));
        }
        // the two tracker endpoints may share one script
        let shared = |ep| self.script.endpoints.get(&ep);
        self.script
            .endpoints
            .get(&endpoint)
            .or_else(|| match endpoint {
                Endpoint::TrackRegister => shared(Endpoint::TrackAdvance),
                Endpoint::TrackAdvance => shared(Endpoint::TrackRegister),
                _ => None,
            })
            .map(|s| (false, s))
    }

    /// The reply the mock would give, without transport framing.
    pub fn respond(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let endpoint = request.endpoint();
        let hash = request.content_hash();
        let mut state = self.state.lock().unwrap();
        state.log.push(CallRecord {
            endpoint,
            video_id: request.video_id.clone(),
            frame_index: request.body.frame_index(),
            class_name: match &request.body {
                RequestBody::Ground(g) => Some(g.class_name.clone()),
                _ => None,
            },
            request_hash: hash.clone(),
        });
        let Some((per_video, script)) = self.endpoint_script(request.video_id.as_deref(), endpoint) else {
            return Err(BackendError::ScriptExhausted { endpoint });
        };
        if let Some(r) = script.by_hash.get(&hash) {
            return Ok(r.clone().into_response(&request.id));
        }
        let key = (per_video.then(|| request.video_id.clone()).flatten(), endpoint);
        let cursor = state.cursors.entry(key).or_default();
        if let Some(r) = script.sequence.get(*cursor) {
            *cursor += 1;
            return Ok(r.clone().into_response(&request.id));
        }
        let Some(rule) = &script.rule else {
            return Err(BackendError::ScriptExhausted { endpoint });
        };
        let payload = match apply_rule(rule, request, &mut state) {
            Ok(p) => p,
            Err(RuleError::Wire(e)) => {
                return Ok(WireResponse {
                    id: request.id.clone(),
                    outcome: Err(e),
                })
            }
            Err(RuleError::Mismatch(m)) => {
                return Ok(WireResponse::err(&request.id, WireErrorKind::Fatal, m));
            }
        };
        Ok(WireResponse::ok(&request.id, payload))
    }
}

impl Transport for MockBackend {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        self.respond(request)
    }
}

enum RuleError {
    Wire(WireError),
    Mismatch(String),
}

fn region_box(r: &Region, raster: &Raster) -> NormalizedBBox {
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    NormalizedBBox::new(r.x0 as f64 / w, r.y0 as f64 / h, r.x1 as f64 / w, r.y1 as f64 / h)
        .expect("region lies inside the raster")
}

fn colored_boxes(raster: &Raster, colors: &[Rgb], min_pixels: usize) -> Vec<NormalizedBBox> {
    colors
        .iter()
        .flat_map(|&c| color_regions(raster, c))
        .filter(|r| r.pixels >= min_pixels)
        .map(|r| region_box(&r, raster))
        .collect()
}

fn center_distance(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Most frequent color inside the box.
fn dominant_color(raster: &Raster, b: &NormalizedBBox) -> Option<Rgb> {
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let x0 = (b.left() * w).floor() as u32;
    let y0 = (b.top() * h).floor() as u32;
    let x1 = ((b.right() * w).ceil() as u32).min(raster.width());
    let y1 = ((b.bottom() * h).ceil() as u32).min(raster.height());
    let mut counts: BTreeMap<Rgb, usize> = BTreeMap::new();
    for y in y0..y1 {
        for x in x0..x1 {
            *counts.entry(raster.pixel(x, y)).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by_key(|&(c, n)| (n, std::cmp::Reverse(c)))
        .map(|(c, _)| c)
}

fn text_endpoint_prompt(body: &RequestBody) -> Option<&str> {
    match body {
        RequestBody::Describe(_) => Some(""),
        RequestBody::Llm(t) | RequestBody::Judge(t) | RequestBody::Answer(t) => Some(&t.prompt),
        _ => None,
    }
}

fn apply_rule(rule: &MockRule, request: &WireRequest, state: &mut MockState) -> Result<Value, RuleError> {
    let endpoint = request.endpoint();
    let mismatch = || RuleError::Mismatch(format!("rule {rule:?} cannot serve {endpoint}"));
    let decode = |f: &FrameRef| f.decode().map_err(RuleError::Mismatch);
    let fill = |t: &str| t.replace("{video_id}", request.video_id.as_deref().unwrap_or(""));
    match rule {
        MockRule::Fail { error } => Err(RuleError::Wire(error.clone())),
        MockRule::Text { text } => {
            text_endpoint_prompt(&request.body).ok_or_else(mismatch)?;
            Ok(json!({ "text": fill(text) }))
        }
        MockRule::Match { cases, default } => {
            let prompt = text_endpoint_prompt(&request.body).ok_or_else(mismatch)?;
            let text = cases
                .iter()
                .find(|c| prompt.contains(&c.contains))
                .map(|c| c.text.clone())
                .or_else(|| default.clone())
                .ok_or_else(|| RuleError::Mismatch("no case matched the prompt".into()))?;
            Ok(json!({ "text": fill(&text) }))
        }
        MockRule::ColorBoxes {
            classes,
            score,
            min_pixels,
        } => {
            let (frame, wanted): (&FrameRef, Vec<(&String, &Vec<Rgb>)>) = match &request.body {
                RequestBody::Ground(g) => (&g.frame, classes.get_key_value(&g.class_name).into_iter().collect()),
                RequestBody::Persons(p) => (&p.frame, classes.iter().collect()),
                _ => return Err(mismatch()),
            };
            let raster = decode(frame)?;
            let detections: Vec<WireDetection> = wanted
                .into_iter()
                .flat_map(|(label, colors)| {
                    colored_boxes(&raster, colors, *min_pixels)
                        .into_iter()
                        .map(move |bbox| WireDetection {
                            bbox,
                            score: *score,
                            label: Some(label.clone()),
                        })
                })
                .collect();
            Ok(serde_json::to_value(DetectionsResponse { detections }).expect("json"))
        }
        MockRule::HandKeypoints {
            left,
            right,
            confidence,
        } => {
            let RequestBody::Pose(p) = &request.body else {
                return Err(mismatch());
            };
            let pb = p.person_box;
            let spread = |rect: &Option<[f64; 4]>| -> Vec<Keypoint> {
                let Some([l, t, r, b]) = *rect else {
                    return Vec::new();
                };
                let x0 = pb.left() + l * pb.width();
                let x1 = pb.left() + r * pb.width();
                let y0 = pb.top() + t * pb.height();
                let y1 = pb.top() + b * pb.height();
                (0..HAND_KEYPOINTS)
                    .map(|k| Keypoint {
                        x: (x0 + (x1 - x0) * (k % 5) as f64 / 4.0).clamp(0.0, 1.0),
                        y: (y0 + (y1 - y0) * (k / 5).min(4) as f64 / 4.0).clamp(0.0, 1.0),
                        confidence: *confidence,
                    })
                    .collect()
            };
            Ok(serde_json::to_value(PoseResponse {
                left_hand: spread(left),
                right_hand: spread(right),
            })
            .expect("json"))
        }
        MockRule::ColorHands { hands, min_pixels } => {
            let RequestBody::Hands(p) = &request.body else {
                return Err(mismatch());
            };
            let raster = decode(&p.frame)?;
            let mut out = Vec::new();
            for hc in hands {
                for bbox in colored_boxes(&raster, &[hc.color], *min_pixels) {
                    let held = match (hc.contact, hc.object_color) {
                        (ContactKind::ObjectContact, Some(oc)) => colored_boxes(&raster, &[oc], 1)
                            .into_iter()
                            .min_by(|a, b| center_distance(a, &bbox).total_cmp(&center_distance(b, &bbox))),
                        _ => None,
                    };
                    let contact = match (hc.contact, held) {
                        (ContactKind::ObjectContact, None) => ContactKind::NoContact,
                        (c, _) => c,
                    };
                    out.push(WireHand {
                        bbox,
                        side: hc.side,
                        contact,
                        object_bbox: held,
                        score: hc.score,
                    });
                }
            }
            Ok(serde_json::to_value(HandsResponse { hands: out }).expect("json"))
        }
        MockRule::CameraTrajectory {
            translation_step,
            yaw_step,
        } => {
            let RequestBody::CameraPoses(p) = &request.body else {
                return Err(mismatch());
            };
            let poses: Vec<CameraPose> = p
                .frames
                .iter()
                .map(|f| {
                    let i = f.index as f64;
                    CameraPose::yaw(
                        yaw_step * i,
                        [
                            translation_step[0] * i,
                            translation_step[1] * i,
                            translation_step[2] * i,
                        ],
                    )
                })
                .collect();
            Ok(serde_json::to_value(CameraPosesResponse { poses }).expect("json"))
        }
        MockRule::Tracker { mode, velocity, lose } => match &request.body {
            RequestBody::TrackRegister(r) => {
                let color = match mode {
                    TrackerMode::ColorFollow => dominant_color(&decode(&r.frame)?, &r.bbox),
                    TrackerMode::Echo => None,
                };
                state.sessions.entry(r.session.clone()).or_default().insert(
                    r.entity_id,
                    Anchor {
                        frame: r.frame.index,
                        bbox: r.bbox,
                        color,
                        last: Some(r.bbox),
                    },
                );
                Ok(json!({ "ok": true }))
            }
            RequestBody::TrackAdvance(a) => {
                let t = a.frame.index;
                let raster = match mode {
                    TrackerMode::ColorFollow => Some(decode(&a.frame)?),
                    TrackerMode::Echo => None,
                };
                let session = state.sessions.entry(a.session.clone()).or_default();
                let mut boxes = BTreeMap::new();
                for (&id, anchor) in session.iter_mut() {
                    let lost = lose.get(&id).is_some_and(|&at| anchor.frame < at && at <= t);
                    let elapsed = t.saturating_sub(anchor.frame) as f64;
                    let drift = |b: NormalizedBBox| b.translated(velocity[0] * elapsed, velocity[1] * elapsed);
                    let found = if lost {
                        None
                    } else if let (Some(raster), Some(color)) = (&raster, anchor.color) {
                        let reference = anchor.last.unwrap_or(anchor.bbox);
                        let candidates = colored_boxes(raster, &[color], 1);
                        candidates
                            .iter()
                            .copied()
                            .max_by(|a, b| {
                                iou(a, &reference)
                                    .total_cmp(&iou(b, &reference))
                                    .then(center_distance(b, &reference).total_cmp(&center_distance(a, &reference)))
                            })
                            .map(drift)
                    } else if raster.is_some() {
                        None
                    } else {
                        Some(drift(anchor.bbox))
                    };
                    if found.is_some() {
                        anchor.last = found;
                    }
                    boxes.insert(id, found);
                }
                Ok(serde_json::to_value(TrackAdvanceResponse {
                    frame_index: t,
                    boxes,
                    mask_area: None,
                })
                .expect("json"))
            }
            _ => Err(mismatch()),
        },
    }
}
