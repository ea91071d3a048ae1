//! Per-video motion annotation document, its canonical serialization and
//! validator, and the overlay drawing plan.
//!
//! Canonical form: compact JSON, object keys `object_NN` in first-appearance
//! order, inner keys `bbox`, `object_type`, `interactions` in that order,
//! coordinates with exactly six decimals, `null` for absent values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{iou, ContactKind, EntityId, EntityKind, NormalizedBBox, PipelineConfig, Tracklet};

/// JSON Schema for motion documents, published alongside the validator.
pub const MOTION_SCHEMA: &str = include_str!("../schemas/motion.schema.json");

#[derive(Debug, Error, PartialEq)]
pub enum AnnotateError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

fn violation(msg: impl Into<String>) -> AnnotateError {
    AnnotateError::SchemaViolation(msg.into())
}

/// Symmetric per-frame relation between entities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Interactions {
    frames: Vec<BTreeMap<EntityId, BTreeSet<EntityId>>>,
}

impl Interactions {
    pub fn new(frame_count: usize) -> Self {
        Self {
            frames: vec![BTreeMap::new(); frame_count],
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn link(&mut self, t: usize, a: EntityId, b: EntityId) {
        if a == b {
            return;
        }
        self.frames[t].entry(a).or_default().insert(b);
        self.frames[t].entry(b).or_default().insert(a);
    }

    pub fn partners(&self, t: usize, id: EntityId) -> Option<&BTreeSet<EntityId>> {
        self.frames.get(t).and_then(|m| m.get(&id)).filter(|s| !s.is_empty())
    }

    pub fn is_symmetric(&self) -> bool {
        self.frames.iter().all(|m| {
            m.iter()
                .all(|(a, bs)| bs.iter().all(|b| m.get(b).is_some_and(|s| s.contains(a))))
        })
    }
}

fn center_distance(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Interaction rule per frame:
/// a hand in object contact links to the object whose box best overlaps the
/// held-object box (IoU above the hand-object threshold); a hand in self
/// contact links to its own person and one in other contact to the nearest
/// other person; any two non-hand entities whose boxes overlap above the
/// object-object threshold are linked.
pub fn compute_interactions(tracklets: &[Tracklet], cfg: &PipelineConfig) -> Interactions {
    let n = tracklets.iter().map(Tracklet::frame_count).max().unwrap_or(0);
    let mut out = Interactions::new(n);
    for t in 0..n {
        let present: Vec<(EntityId, NormalizedBBox, &Tracklet)> = tracklets
            .iter()
            .filter_map(|tr| tr.box_at(t).map(|b| (tr.id, b, tr)))
            .collect();
        for &(hid, hbox, tr) in present.iter().filter(|(id, _, _)| id.kind().is_hand()) {
            let Some(contact) = tr.contact_at(t) else { continue };
            match contact.value() {
                ContactKind::ObjectContact => {
                    let held = contact.held_object_box().expect("object contact carries a box");
                    let best = present
                        .iter()
                        .filter(|(id, _, _)| id.kind() == EntityKind::Object)
                        .map(|&(id, b, _)| (iou(&b, &held), id))
                        .filter(|(v, _)| *v > cfg.hand_object_interaction_iou)
                        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
                    if let Some((_, obj)) = best {
                        out.link(t, hid, obj);
                    }
                }
                ContactKind::SelfContact => {
                    let own = hid.root().map(|r| r.person());
                    if let Some(&(pid, _, _)) = present.iter().find(|(id, _, _)| Some(*id) == own) {
                        out.link(t, hid, pid);
                    }
                }
                ContactKind::OtherContact => {
                    let own = hid.root().map(|r| r.person());
                    let nearest = present
                        .iter()
                        .filter(|(id, _, _)| id.kind() == EntityKind::Person && Some(*id) != own)
                        .map(|&(id, b, _)| (center_distance(&b, &hbox), id))
                        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    if let Some((_, pid)) = nearest {
                        out.link(t, hid, pid);
                    }
                }
                ContactKind::NoContact => {}
            }
        }
        let solid: Vec<_> = present.iter().filter(|(id, _, _)| !id.kind().is_hand()).collect();
        for (i, a) in solid.iter().enumerate() {
            for b in &solid[i + 1..] {
                if iou(&a.1, &b.1) > cfg.object_object_interaction_iou {
                    out.link(t, a.0, b.0);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEntry {
    pub bbox: Vec<Option<[f64; 4]>>,
    pub object_type: String,
    pub interactions: Vec<Option<Vec<String>>>,
}

/// Ordered map from `object_NN` keys to entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionAnnotation {
    pub objects: IndexMap<String, MotionEntry>,
}

pub fn object_key(index: usize) -> String {
    format!("object_{index:02}")
}

fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Entities seen at least once, ordered by first appearance then raw ID,
/// with their document keys.
pub fn key_assignment(tracklets: &[Tracklet]) -> Vec<(String, &Tracklet)> {
    let mut seen: Vec<(usize, &Tracklet)> = tracklets
        .iter()
        .filter_map(|t| t.first_appearance().map(|f| (f, t)))
        .collect();
    seen.sort_by_key(|(f, t)| (*f, t.id));
    seen.into_iter()
        .enumerate()
        .map(|(i, (_, t))| (object_key(i), t))
        .collect()
}

pub fn build_motion_annotation(
    tracklets: &[Tracklet],
    interactions: &Interactions,
    frame_count: usize,
) -> Result<MotionAnnotation, AnnotateError> {
    for t in tracklets {
        if t.frame_count() != frame_count {
            return Err(violation(format!(
                "entity {} has {} frames, expected {frame_count}",
                t.id,
                t.frame_count()
            )));
        }
        if let Some(c) = &t.contact_states {
            if c.len() != frame_count {
                return Err(violation(format!("entity {} contact states misaligned", t.id)));
            }
        }
    }
    if interactions.frame_count() != frame_count && !(tracklets.is_empty() && interactions.frame_count() == 0) {
        return Err(violation(format!(
            "interactions cover {} frames, expected {frame_count}",
            interactions.frame_count()
        )));
    }
    let keys = key_assignment(tracklets);
    let key_of: BTreeMap<EntityId, &str> = keys.iter().map(|(k, t)| (t.id, k.as_str())).collect();
    let mut objects = IndexMap::new();
    for (key, tr) in &keys {
        let bbox = tr.boxes.iter().map(|b| b.map(|b| b.to_array().map(round6))).collect();
        let inter = (0..frame_count)
            .map(|t| {
                tr.box_at(t)?;
                let mut partners: Vec<&str> = interactions
                    .partners(t, tr.id)?
                    .iter()
                    .filter_map(|p| key_of.get(p).copied())
                    .collect();
                partners.sort_unstable();
                (!partners.is_empty()).then(|| partners.into_iter().map(String::from).collect())
            })
            .collect();
        objects.insert(
            key.clone(),
            MotionEntry {
                bbox,
                object_type: tr.object_type.clone(),
                interactions: inter,
            },
        );
    }
    Ok(MotionAnnotation { objects })
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings serialize"));
}

/// Canonical bytes of a document (no trailing newline).
pub fn serialize_motion(doc: &MotionAnnotation) -> String {
    let mut out = String::from("{");
    for (i, (key, e)) in doc.objects.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_string(&mut out, key);
        out.push_str(":{\"bbox\":[");
        for (j, b) in e.bbox.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            match b {
                Some(v) => {
                    let _ = write!(out, "[{:.6},{:.6},{:.6},{:.6}]", v[0], v[1], v[2], v[3]);
                }
                None => out.push_str("null"),
            }
        }
        out.push_str("],\"object_type\":");
        write_string(&mut out, &e.object_type);
        out.push_str(",\"interactions\":[");
        for (j, inter) in e.interactions.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            match inter {
                Some(list) => {
                    out.push('[');
                    for (k, p) in list.iter().enumerate() {
                        if k > 0 {
                            out.push(',');
                        }
                        write_string(&mut out, p);
                    }
                    out.push(']');
                }
                None => out.push_str("null"),
            }
        }
        out.push_str("]}");
    }
    out.push('}');
    out
}

pub fn build_motion_json(
    tracklets: &[Tracklet],
    interactions: &Interactions,
    frame_count: usize,
) -> Result<String, AnnotateError> {
    let doc = build_motion_annotation(tracklets, interactions, frame_count)?;
    validate_motion(&doc)?;
    Ok(serialize_motion(&doc))
}

fn parse_box(v: &Value, ctx: &str) -> Result<Option<[f64; 4]>, AnnotateError> {
    match v {
        Value::Null => Ok(None),
        Value::Array(a) if a.len() == 4 => {
            let mut out = [0.0; 4];
            for (o, x) in out.iter_mut().zip(a) {
                *o = x
                    .as_f64()
                    .ok_or_else(|| violation(format!("{ctx}: non-numeric coordinate")))?;
            }
            Ok(Some(out))
        }
        _ => Err(violation(format!("{ctx}: bbox entries are 4-number arrays or null"))),
    }
}

/// Parses and validates a document.
pub fn parse_motion_json(text: &str) -> Result<MotionAnnotation, AnnotateError> {
    let root: Value = serde_json::from_str(text).map_err(|e| violation(format!("not JSON: {e}")))?;
    let Value::Object(map) = root else {
        return Err(violation("document must be an object"));
    };
    let mut objects = IndexMap::new();
    for (key, v) in map {
        let Value::Object(entry) = v else {
            return Err(violation(format!("{key}: entry must be an object")));
        };
        let names: Vec<&str> = entry.keys().map(String::as_str).collect();
        if names != ["bbox", "object_type", "interactions"] {
            return Err(violation(format!(
                "{key}: keys must be exactly bbox, object_type, interactions in that order, got {names:?}"
            )));
        }
        let bbox = match &entry["bbox"] {
            Value::Array(a) => a
                .iter()
                .enumerate()
                .map(|(t, b)| parse_box(b, &format!("{key}.bbox[{t}]")))
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err(violation(format!("{key}.bbox must be an array"))),
        };
        let object_type = entry["object_type"]
            .as_str()
            .ok_or_else(|| violation(format!("{key}.object_type must be a string")))?
            .to_string();
        let interactions = match &entry["interactions"] {
            Value::Array(a) => a
                .iter()
                .enumerate()
                .map(|(t, x)| match x {
                    Value::Null => Ok(None),
                    Value::Array(items) => items
                        .iter()
                        .map(|i| {
                            i.as_str()
                                .map(String::from)
                                .ok_or_else(|| violation(format!("{key}.interactions[{t}] holds a non-string")))
                        })
                        .collect::<Result<Vec<_>, _>>()
                        .map(Some),
                    _ => Err(violation(format!("{key}.interactions[{t}] must be a list or null"))),
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err(violation(format!("{key}.interactions must be an array"))),
        };
        objects.insert(
            key,
            MotionEntry {
                bbox,
                object_type,
                interactions,
            },
        );
    }
    let doc = MotionAnnotation { objects };
    validate_motion(&doc)?;
    Ok(doc)
}

/// Structural checks beyond the JSON shape: key naming and order, aligned
/// frame counts, valid boxes, and interactions that reference present keys.
pub fn validate_motion(doc: &MotionAnnotation) -> Result<(), AnnotateError> {
    let frame_count = doc.objects.values().next().map(|e| e.bbox.len());
    let mut last_first = 0usize;
    for (i, (key, e)) in doc.objects.iter().enumerate() {
        if *key != object_key(i) {
            return Err(violation(format!(
                "key {key} at position {i}, expected {}",
                object_key(i)
            )));
        }
        if Some(e.bbox.len()) != frame_count || e.interactions.len() != e.bbox.len() {
            return Err(violation(format!(
                "{key}: bbox and interactions must cover every frame"
            )));
        }
        if e.object_type.is_empty() {
            return Err(violation(format!("{key}: empty object_type")));
        }
        let first = e
            .bbox
            .iter()
            .position(Option::is_some)
            .ok_or_else(|| violation(format!("{key}: never present")))?;
        if first < last_first {
            return Err(violation(format!("{key}: keys are not in first-appearance order")));
        }
        last_first = first;
        for (t, b) in e.bbox.iter().enumerate() {
            if let Some(b) = b {
                NormalizedBBox::new(b[0], b[1], b[2], b[3])
                    .map_err(|err| violation(format!("{key}.bbox[{t}]: {err}")))?;
                if b.iter().any(|v| *v < 0.0 || *v > 1.0) {
                    return Err(violation(format!("{key}.bbox[{t}]: coordinates outside [0, 1]")));
                }
            }
        }
        for (t, inter) in e.interactions.iter().enumerate() {
            let Some(list) = inter else { continue };
            if list.is_empty() {
                return Err(violation(format!("{key}.interactions[{t}]: empty list must be null")));
            }
            if e.bbox[t].is_none() {
                return Err(violation(format!(
                    "{key}.interactions[{t}]: entity absent in that frame"
                )));
            }
            for other in list {
                if other == key {
                    return Err(violation(format!("{key}.interactions[{t}]: self reference")));
                }
                let Some(o) = doc.objects.get(other) else {
                    return Err(violation(format!("{key}.interactions[{t}]: unknown key {other}")));
                };
                let back = o.interactions.get(t).and_then(|x| x.as_ref());
                if !back.is_some_and(|l| l.contains(key)) {
                    return Err(violation(format!(
                        "{key}.interactions[{t}]: {other} does not link back"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Sidecar map from document key to entity ID.
pub fn build_idmap(tracklets: &[Tracklet]) -> IndexMap<String, u32> {
    key_assignment(tracklets)
        .into_iter()
        .map(|(k, t)| (k, t.id.raw()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawCommand {
    pub entity_id: u32,
    pub bbox: NormalizedBBox,
    pub label: String,
    pub color_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayFrame {
    pub frame_index: usize,
    pub commands: Vec<DrawCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPlan {
    pub palette_size: usize,
    pub frames: Vec<OverlayFrame>,
}

impl OverlayPlan {
    /// The plan restricted to the given frame indices.
    pub fn subset(&self, frame_indices: &[usize]) -> OverlayPlan {
        OverlayPlan {
            palette_size: self.palette_size,
            frames: self
                .frames
                .iter()
                .filter(|f| frame_indices.contains(&f.frame_index))
                .cloned()
                .collect(),
        }
    }
}

pub fn color_index(id: EntityId, palette_size: usize) -> usize {
    id.raw() as usize % palette_size.max(1)
}

pub fn render_overlay_plan(tracklets: &[Tracklet], frame_count: usize, cfg: &PipelineConfig) -> OverlayPlan {
    let mut ordered: Vec<&Tracklet> = tracklets.iter().collect();
    ordered.sort_by_key(|t| t.id);
    let frames = (0..frame_count)
        .map(|t| OverlayFrame {
            frame_index: t,
            commands: ordered
                .iter()
                .filter_map(|tr| {
                    tr.box_at(t).map(|bbox| DrawCommand {
                        entity_id: tr.id.raw(),
                        bbox,
                        label: tr.object_type.clone(),
                        color_index: color_index(tr.id, cfg.palette_size),
                    })
                })
                .collect(),
        })
        .collect();
    OverlayPlan {
        palette_size: cfg.palette_size,
        frames,
    }
}
