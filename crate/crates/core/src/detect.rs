//! First-frame detection: scene inventory, per-class grounding, persons,
//! pose-derived hand regions and hand/person association.

use thiserror::Error;

use crate::backends::protocol::{FrameRef, Keypoint, WireHand};
use crate::backends::{BackendClient, BackendError};
use crate::model::{
    iou, normalize_bbox, ContactState, HandSide, NormalizedBBox, PersonRoot, PipelineConfig, PixelBox, VideoMeta,
    MAX_PERSONS,
};

/// Root given to the leftmost person; later persons count up from here.
pub const FIRST_PERSON_ROOT: u32 = 1;
/// Persons that fit in the root range when counting from [`FIRST_PERSON_ROOT`].
pub const MAX_TRACKED_PERSONS: usize = (MAX_PERSONS - FIRST_PERSON_ROOT) as usize;

/// Root ID of the `index`-th person in left-to-right order.
pub fn person_root(index: usize) -> PersonRoot {
    PersonRoot::new(FIRST_PERSON_ROOT + index as u32).expect("persons are capped at the root range")
}

/// Labels routed to the human pipeline instead of being grounded.
pub const PERSON_STOP_LIST: [&str; 5] = ["person", "man", "woman", "child", "people"];

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("describer reply named no usable object categories")]
    EmptyInventory,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneInventory {
    categories: Vec<String>,
}

impl SceneInventory {
    pub fn new<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Self {
        let mut categories: Vec<String> = Vec::new();
        for n in names {
            let n = n.as_ref().trim().to_lowercase();
            if !n.is_empty() && !categories.contains(&n) {
                categories.push(n);
            }
        }
        Self { categories }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.categories.iter().any(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: NormalizedBBox,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandDetection {
    pub bbox: NormalizedBBox,
    pub side: HandSide,
    pub contact: ContactState,
    pub score: f64,
    /// Set by [`associate_hands`].
    pub person: Option<PersonRoot>,
}

impl HandDetection {
    pub fn from_wire(h: &WireHand) -> Self {
        let contact = ContactState::new(h.contact, h.object_bbox).unwrap_or_else(|e| {
            log::warn!("hand contact dropped: {e}");
            ContactState::none()
        });
        Self {
            bbox: h.bbox,
            side: h.side,
            contact,
            score: h.score,
            person: None,
        }
    }
}

/// Hand region derived from a person's pose keypoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRegion {
    pub person: PersonRoot,
    pub side: HandSide,
    pub bbox: NormalizedBBox,
}

/// Splits a free-text object listing into normalized category names.
/// Accepts comma, semicolon or newline separated items, with optional
/// bullets, numbering, articles and a trailing period.
pub fn parse_inventory(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in reply.split([',', ';', '\n']) {
        let mut item = raw.trim().trim_start_matches(['-', '*', '•']).trim();
        let numbered = item.trim_start_matches(|c: char| c.is_ascii_digit());
        if numbered.len() != item.len() && (numbered.starts_with('.') || numbered.starts_with(')')) {
            item = numbered[1..].trim();
        }
        let item = item.trim_end_matches(['.', '!']).trim().to_lowercase();
        let item = ["a ", "an ", "the ", "and "]
            .iter()
            .fold(item.as_str(), |s, p| s.strip_prefix(p).unwrap_or(s))
            .trim()
            .to_string();
        if !item.is_empty() && !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

pub fn is_person_label(label: &str) -> bool {
    PERSON_STOP_LIST.contains(&label)
}

/// Parsed, deduplicated inventory with person-like labels removed.
pub fn inventory_from_reply(reply: &str) -> Result<SceneInventory, DetectError> {
    let inv = SceneInventory::new(parse_inventory(reply).into_iter().filter(|c| !is_person_label(c)));
    if inv.is_empty() {
        return Err(DetectError::EmptyInventory);
    }
    Ok(inv)
}

pub fn list_salient_objects(client: &BackendClient, first_frame: FrameRef) -> Result<SceneInventory, DetectError> {
    let reply = client.describe(first_frame)?;
    inventory_from_reply(&reply)
}

/// One grounding query per class. A failing class is logged and skipped.
/// Results are sorted by label, then left edge.
pub fn ground_objects(client: &BackendClient, first_frame: &FrameRef, inventory: &SceneInventory) -> Vec<Detection> {
    let mut out = Vec::new();
    for class in inventory.categories() {
        match client.ground(first_frame.clone(), class) {
            Ok(dets) => out.extend(dets.into_iter().map(|d| Detection {
                bbox: d.bbox,
                label: class.clone(),
                score: d.score,
            })),
            Err(e) => log::warn!("grounding {class:?} failed, skipping: {e}"),
        }
    }
    sort_detections(&mut out);
    out
}

pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.label
            .cmp(&b.label)
            .then(a.bbox.left().total_cmp(&b.bbox.left()))
            .then(a.bbox.top().total_cmp(&b.bbox.top()))
    });
}

/// Keeps persons scoring at least the threshold, ordered by left edge and
/// capped at the root range.
pub fn filter_persons(mut dets: Vec<Detection>, cfg: &PipelineConfig) -> Vec<Detection> {
    dets.retain(|d| d.score >= cfg.person_threshold);
    dets.sort_by(|a, b| {
        a.bbox
            .left()
            .total_cmp(&b.bbox.left())
            .then(a.bbox.top().total_cmp(&b.bbox.top()))
    });
    if dets.len() > MAX_TRACKED_PERSONS {
        log::warn!(
            "{} persons detected, keeping the first {MAX_TRACKED_PERSONS}",
            dets.len()
        );
        dets.truncate(MAX_TRACKED_PERSONS);
    }
    dets
}

pub fn detect_persons(
    client: &BackendClient,
    first_frame: FrameRef,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>, BackendError> {
    let dets = client
        .persons(first_frame)?
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox,
            label: "person".into(),
            score: d.score,
        })
        .collect();
    Ok(filter_persons(dets, cfg))
}

/// Tight box over the confident keypoints (pixel coordinates), scaled
/// about its center and clamped to the frame.
pub fn hand_region_from_keypoints(keypoints: &[Keypoint], meta: &VideoMeta, cfg: &PipelineConfig) -> Option<PixelBox> {
    let (w, h) = (meta.width as f64, meta.height as f64);
    let mut pts = keypoints
        .iter()
        .filter(|k| k.confidence >= cfg.keypoint_confidence_floor)
        .map(|k| (k.x * w, k.y * h));
    let (x0, y0) = pts.next()?;
    let (mut l, mut t, mut r, mut b) = (x0, y0, x0, y0);
    for (x, y) in pts {
        l = l.min(x);
        t = t.min(y);
        r = r.max(x);
        b = b.max(y);
    }
    Some(PixelBox::new(l, t, r, b).expand_about_center(cfg.hand_expansion, w, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandRegions {
    pub left: Option<PixelBox>,
    pub right: Option<PixelBox>,
}

pub fn hand_regions_from_pose(
    client: &BackendClient,
    frame: FrameRef,
    person_box: NormalizedBBox,
    meta: &VideoMeta,
    cfg: &PipelineConfig,
) -> Result<HandRegions, BackendError> {
    let pose = client.pose(frame, person_box)?;
    Ok(HandRegions {
        left: hand_region_from_keypoints(&pose.left_hand, meta, cfg),
        right: hand_region_from_keypoints(&pose.right_hand, meta, cfg),
    })
}

/// Converts per-person regions into normalized pose regions; persons are
/// indexed by their position in `regions`.
pub fn pose_regions(regions: &[HandRegions], meta: &VideoMeta) -> Vec<PoseRegion> {
    let mut out = Vec::new();
    for (i, r) in regions.iter().enumerate() {
        let root = person_root(i);
        for (side, px) in [(HandSide::Left, r.left), (HandSide::Right, r.right)] {
            let Some(px) = px else { continue };
            match normalize_bbox(&px, meta) {
                Ok(bbox) if bbox.area() > 0.0 => out.push(PoseRegion {
                    person: root,
                    side,
                    bbox,
                }),
                Ok(_) => {}
                Err(e) => log::warn!("hand region dropped: {e}"),
            }
        }
    }
    out
}

/// Greedy matching by descending IoU between pose regions and hand
/// detections of the same side. Ties go to the lower person root, then the
/// earlier detection. Pairs at or below the IoU gate never match and
/// unmatched detections are dropped.
pub fn associate_hands(regions: &[PoseRegion], hands: &[HandDetection], cfg: &PipelineConfig) -> Vec<HandDetection> {
    let mut pairs = Vec::new();
    for (ri, r) in regions.iter().enumerate() {
        for (hi, h) in hands.iter().enumerate() {
            if r.side != h.side {
                continue;
            }
            let v = iou(&r.bbox, &h.bbox);
            if v > cfg.association_iou {
                pairs.push((v, r.person.get(), hi, ri));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut region_used = vec![false; regions.len()];
    let mut hand_used = vec![false; hands.len()];
    let mut taken: Vec<(PersonRoot, HandSide)> = Vec::new();
    let mut out = Vec::new();
    for (_, _, hi, ri) in pairs {
        let key = (regions[ri].person, regions[ri].side);
        if region_used[ri] || hand_used[hi] || taken.contains(&key) {
            continue;
        }
        region_used[ri] = true;
        hand_used[hi] = true;
        taken.push(key);
        out.push(HandDetection {
            person: Some(regions[ri].person),
            ..hands[hi].clone()
        });
    }
    out.sort_by_key(|h| (h.person.map(PersonRoot::get), h.side == HandSide::Right));
    out
}

pub fn detect_hands(client: &BackendClient, frame: FrameRef) -> Result<Vec<HandDetection>, BackendError> {
    Ok(client.hands(frame)?.iter().map(HandDetection::from_wire).collect())
}

/// Everything found on the first frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FirstFrameDetections {
    pub inventory: SceneInventory,
    pub objects: Vec<Detection>,
    /// Left to right; the `i`-th person has root `person_root(i)`.
    pub persons: Vec<Detection>,
    pub hands: Vec<HandDetection>,
}

pub fn detect_first_frame(
    client: &BackendClient,
    frame: FrameRef,
    meta: &VideoMeta,
    cfg: &PipelineConfig,
) -> Result<FirstFrameDetections, BackendError> {
    let (inventory, objects) = match list_salient_objects(client, frame.clone()) {
        Ok(inv) => {
            let objects = ground_objects(client, &frame, &inv);
            (inv, objects)
        }
        Err(DetectError::EmptyInventory) => {
            log::info!("empty scene inventory, continuing with persons only");
            (SceneInventory::default(), Vec::new())
        }
        Err(DetectError::Backend(e)) => return Err(e),
    };
    let persons = detect_persons(client, frame.clone(), cfg)?;
    let hands = if persons.is_empty() {
        Vec::new()
    } else {
        let mut regions = Vec::with_capacity(persons.len());
        for p in &persons {
            regions.push(hand_regions_from_pose(client, frame.clone(), p.bbox, meta, cfg)?);
        }
        let fresh = detect_hands(client, frame)?;
        associate_hands(&pose_regions(&regions, meta), &fresh, cfg)
    };
    Ok(FirstFrameDetections {
        inventory,
        objects,
        persons,
        hands,
    })
}
