//! Two-stage tracking: first-frame entities are registered with the
//! tracker service, propagated frame by frame, and re-pinned to fresh hand
//! detections at every keyframe.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::backends::protocol::TrackAdvanceResponse;
use crate::backends::{BackendClient, BackendError};
use crate::detect::{detect_hands, person_root, Detection, FirstFrameDetections, HandDetection};
use crate::model::{
    iou, ContactState, EntityId, EntityKind, HandSide, ModelError, NormalizedBBox, ObjectIdAllocator, PipelineConfig,
    Tracklet,
};
use crate::preprocess::FrameSet;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Ids(#[from] ModelError),
    #[error("first frame of the segment is missing")]
    MissingFirstFrame,
    #[error("tracking aborted at frame {frame}: {source}")]
    Abort { frame: usize, source: BackendError },
}

pub fn hand_label(side: HandSide) -> &'static str {
    match side {
        HandSide::Left => "left_hand",
        HandSide::Right => "right_hand",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedEntity {
    pub id: EntityId,
    pub label: String,
    pub initial: NormalizedBBox,
    /// Frame at which the entity was first registered.
    pub registered_at: usize,
}

/// A box update applied at a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Repin {
    pub id: EntityId,
    pub bbox: NormalizedBBox,
    pub contact: Option<ContactState>,
    /// Set when the entity did not exist before this keyframe.
    pub new_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSession {
    pub session_id: String,
    frame_count: usize,
    stride: usize,
    entities: BTreeMap<EntityId, TrackedEntity>,
    state: Vec<BTreeMap<EntityId, Option<NormalizedBBox>>>,
    propagated: Vec<bool>,
    contacts: BTreeMap<EntityId, BTreeMap<usize, ContactState>>,
    refined: Vec<usize>,
    aborted_at: Option<usize>,
}

/// Keeps the first of any same-label pair whose IoU exceeds the threshold.
pub fn dedup_objects(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let dup = kept
            .iter()
            .any(|k| k.label == d.label && iou(&k.bbox, &d.bbox) > threshold);
        if dup {
            log::debug!("dropping duplicate {} box {:?}", d.label, d.bbox.to_array());
        } else {
            kept.push(d.clone());
        }
    }
    kept
}

/// Frames at which detections are refreshed: 0, stride, 2·stride, ….
pub fn keyframes(frame_count: usize, stride: usize) -> Vec<usize> {
    (0..frame_count).step_by(stride.max(1)).collect()
}

pub fn init_tracks(
    session_id: &str,
    first: &FirstFrameDetections,
    frame_count: usize,
    cfg: &PipelineConfig,
) -> Result<TrackSession, ModelError> {
    let mut session = TrackSession {
        session_id: session_id.to_string(),
        frame_count,
        stride: cfg.keyframe_stride,
        entities: BTreeMap::new(),
        state: vec![BTreeMap::new(); frame_count],
        propagated: vec![false; frame_count],
        contacts: BTreeMap::new(),
        refined: Vec::new(),
        aborted_at: None,
    };
    if frame_count == 0 {
        return Ok(session);
    }
    if first.persons.len() > crate::detect::MAX_TRACKED_PERSONS {
        return Err(ModelError::IdRangeExceeded(format!("{} persons", first.persons.len())));
    }
    for (i, p) in first.persons.iter().enumerate() {
        session.insert(person_root(i).person(), "person", p.bbox, 0);
    }
    for h in &first.hands {
        let Some(root) = h.person else { continue };
        let id = root.hand(h.side);
        session.insert(id, hand_label(h.side), h.bbox, 0);
        session.contacts.entry(id).or_default().insert(0, h.contact);
    }
    let mut alloc = ObjectIdAllocator::default();
    for d in dedup_objects(&first.objects, cfg.object_dedup_iou) {
        session.insert(alloc.next_id()?, &d.label, d.bbox, 0);
    }
    session.propagated[0] = true;
    session.refined.push(0);
    Ok(session)
}

impl TrackSession {
    fn insert(&mut self, id: EntityId, label: &str, bbox: NormalizedBBox, frame: usize) {
        self.entities.insert(
            id,
            TrackedEntity {
                id,
                label: label.to_string(),
                initial: bbox,
                registered_at: frame,
            },
        );
        self.state[frame].insert(id, Some(bbox));
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn entities(&self) -> impl Iterator<Item = &TrackedEntity> {
        self.entities.values()
    }

    pub fn entity_ids(&self) -> Vec<EntityId> {
        self.entities.keys().copied().collect()
    }

    pub fn box_at(&self, frame: usize, id: EntityId) -> Option<NormalizedBBox> {
        self.state.get(frame).and_then(|m| m.get(&id).copied().flatten())
    }

    /// Keyframes at which refinement was applied, frame 0 included.
    pub fn refined_keyframes(&self) -> &[usize] {
        &self.refined
    }

    pub fn aborted_at(&self) -> Option<usize> {
        self.aborted_at
    }

    /// Writes the tracker's boxes for frame `t`. Registered entities missing
    /// from the reply are absent for that frame; unknown IDs are ignored.
    pub fn apply_advance(&mut self, t: usize, reply: &TrackAdvanceResponse) {
        if t >= self.frame_count || std::mem::replace(&mut self.propagated[t], true) {
            log::warn!("{}: frame {t} already propagated, reply ignored", self.session_id);
            return;
        }
        for &id in self.entities.keys() {
            let b = reply.boxes.get(&id.raw()).copied().flatten();
            self.state[t].insert(id, b);
        }
        for raw in reply.boxes.keys() {
            if !self.entities.keys().any(|id| id.raw() == *raw) {
                log::warn!("{}: tracker reported unknown entity {raw}", self.session_id);
            }
        }
    }

    /// Frame that could not be decoded: every entity is absent.
    pub fn mark_gap(&mut self, t: usize) {
        if t < self.frame_count && !std::mem::replace(&mut self.propagated[t], true) {
            for &id in self.entities.keys() {
                self.state[t].insert(id, None);
            }
        }
    }

    /// Matches fresh hand detections at keyframe `t` against hand tracks of
    /// the same side (IoU above the association gate, greedy, ties to the
    /// lower entity ID). Unmatched hands inside a tracked person's box become
    /// that person's hand; the lowest root wins when several contain it.
    /// Held-object boxes re-pin the best-overlapping object track.
    pub fn plan_refinement(&self, t: usize, fresh: &[HandDetection], cfg: &PipelineConfig) -> Vec<Repin> {
        let gate = cfg.association_iou;
        let mut pairs = Vec::new();
        for (fi, h) in fresh.iter().enumerate() {
            for (&id, _) in self.entities.iter().filter(|(id, _)| id.hand_side() == Some(h.side)) {
                if let Some(cur) = self.box_at(t, id) {
                    let v = iou(&cur, &h.bbox);
                    if v > gate {
                        pairs.push((v, id, fi));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut assigned: BTreeMap<EntityId, usize> = BTreeMap::new();
        let mut used = vec![false; fresh.len()];
        for (_, id, fi) in pairs {
            if used[fi] || assigned.contains_key(&id) {
                continue;
            }
            used[fi] = true;
            assigned.insert(id, fi);
        }
        let mut repins: Vec<Repin> = assigned
            .iter()
            .map(|(&id, &fi)| Repin {
                id,
                bbox: fresh[fi].bbox,
                contact: Some(fresh[fi].contact),
                new_label: None,
            })
            .collect();

        for (fi, h) in fresh.iter().enumerate() {
            if used[fi] {
                continue;
            }
            let (cx, cy) = h.bbox.center();
            let owner = self
                .entities
                .keys()
                .filter(|id| id.kind() == EntityKind::Person)
                .find(|&&id| self.box_at(t, id).is_some_and(|b| b.contains_point(cx, cy)));
            let Some(root) = owner.and_then(|p| p.root()) else {
                continue;
            };
            let id = root.hand(h.side);
            if assigned.contains_key(&id) {
                continue;
            }
            used[fi] = true;
            assigned.insert(id, fi);
            repins.push(Repin {
                id,
                bbox: h.bbox,
                contact: Some(h.contact),
                new_label: (!self.entities.contains_key(&id)).then(|| hand_label(h.side).to_string()),
            });
        }

        let mut objects_pinned: Vec<EntityId> = Vec::new();
        let mut held: Vec<NormalizedBBox> = assigned
            .values()
            .filter_map(|&fi| fresh[fi].contact.held_object_box())
            .collect();
        held.sort_by(|a, b| a.to_array().partial_cmp(&b.to_array()).expect("finite"));
        for hb in held {
            let best = self
                .entities
                .keys()
                .filter(|id| id.kind() == EntityKind::Object && !objects_pinned.contains(id))
                .filter_map(|&id| self.box_at(t, id).map(|b| (iou(&b, &hb), id)))
                .filter(|(v, _)| *v > gate)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            if let Some((_, id)) = best {
                objects_pinned.push(id);
                repins.push(Repin {
                    id,
                    bbox: hb,
                    contact: None,
                    new_label: None,
                });
            }
        }
        repins
    }

    pub fn apply_repin(&mut self, t: usize, r: &Repin) {
        if let Some(label) = &r.new_label {
            self.entities.insert(
                r.id,
                TrackedEntity {
                    id: r.id,
                    label: label.clone(),
                    initial: r.bbox,
                    registered_at: t,
                },
            );
        }
        self.state[t].insert(r.id, Some(r.bbox));
        if let Some(c) = r.contact {
            self.contacts.entry(r.id).or_default().insert(t, c);
        }
    }

    fn note_refined(&mut self, t: usize) {
        if !self.refined.contains(&t) {
            self.refined.push(t);
        }
    }
}

/// Registers every first-frame entity with the tracker service.
pub fn register_initial(client: &BackendClient, frames: &FrameSet, session: &TrackSession) -> Result<(), TrackError> {
    let frame = frames.get(0).ok_or(TrackError::MissingFirstFrame)?;
    let fref = client
        .frame_ref(frame)
        .map_err(|source| TrackError::Abort { frame: 0, source })?;
    for e in session.entities.values() {
        client
            .track_register(&session.session_id, fref.clone(), e.id.raw(), e.initial)
            .map_err(|source| TrackError::Abort { frame: 0, source })?;
    }
    Ok(())
}

/// Re-runs hand detection at keyframe `t` and applies the plan. Detection
/// failure skips the keyframe.
pub fn refine_keyframe(
    client: &BackendClient,
    frames: &FrameSet,
    session: &mut TrackSession,
    t: usize,
    cfg: &PipelineConfig,
) -> Result<(), TrackError> {
    let Some(frame) = frames.get(t) else {
        return Ok(());
    };
    let fref = client
        .frame_ref(frame)
        .map_err(|source| TrackError::Abort { frame: t, source })?;
    let fresh = match detect_hands(client, fref.clone()) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("{}: keyframe {t} skipped: {e}", session.session_id);
            return Ok(());
        }
    };
    for r in session.plan_refinement(t, &fresh, cfg) {
        session.apply_repin(t, &r);
        client
            .track_register(&session.session_id, fref.clone(), r.id.raw(), r.bbox)
            .map_err(|source| TrackError::Abort { frame: t, source })?;
    }
    session.note_refined(t);
    Ok(())
}

/// Registers, propagates and refines over the whole segment. On a tracker
/// failure the session keeps everything computed so far and records the
/// abort frame.
pub fn run_tracking(
    client: &BackendClient,
    frames: &FrameSet,
    session: &mut TrackSession,
    cfg: &PipelineConfig,
) -> Result<(), TrackError> {
    if session.frame_count == 0 {
        return Ok(());
    }
    let result = (|| {
        register_initial(client, frames, session)?;
        for t in 1..session.frame_count {
            let Some(frame) = frames.get(t) else {
                session.mark_gap(t);
                continue;
            };
            let fref = client
                .frame_ref(frame)
                .map_err(|source| TrackError::Abort { frame: t, source })?;
            let reply = client
                .track_advance(&session.session_id, fref)
                .map_err(|source| TrackError::Abort { frame: t, source })?;
            session.apply_advance(t, &reply);
            if t % session.stride.max(1) == 0 {
                refine_keyframe(client, frames, session, t, cfg)?;
            }
        }
        Ok(())
    })();
    if let Err(TrackError::Abort { frame, .. }) = &result {
        session.aborted_at = Some(*frame);
    }
    result
}

/// One tracklet per entity, ordered by entity ID. Hand contact states are
/// forward-filled from the keyframes at which they were observed.
pub fn assemble_tracklets(session: &TrackSession) -> Vec<Tracklet> {
    session
        .entities
        .values()
        .map(|e| {
            let boxes = (0..session.frame_count).map(|t| session.box_at(t, e.id)).collect();
            let contact_states = e.id.kind().is_hand().then(|| {
                let obs = session.contacts.get(&e.id);
                let mut current = None;
                (0..session.frame_count)
                    .map(|t| {
                        if let Some(c) = obs.and_then(|o| o.get(&t)) {
                            current = Some(*c);
                        }
                        current
                    })
                    .collect()
            });
            Tracklet {
                id: e.id,
                object_type: e.label.clone(),
                boxes,
                contact_states,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::SceneInventory;
    use crate::model::{ContactKind, PersonRoot};

    fn bb(l: f64, t: f64, r: f64, b: f64) -> NormalizedBBox {
        NormalizedBBox::new(l, t, r, b).unwrap()
    }

    fn det(label: &str, b: NormalizedBBox) -> Detection {
        Detection {
            bbox: b,
            label: label.into(),
            score: 0.9,
        }
    }

    fn hand(b: NormalizedBBox, side: HandSide, root: Option<u32>) -> HandDetection {
        HandDetection {
            bbox: b,
            side,
            contact: ContactState::none(),
            score: 0.9,
            person: root.map(|r| PersonRoot::new(r).unwrap()),
        }
    }

    fn one_person_scene() -> FirstFrameDetections {
        FirstFrameDetections {
            inventory: SceneInventory::new(["cup"]),
            objects: vec![det("cup", bb(0.6, 0.6, 0.7, 0.7))],
            persons: vec![det("person", bb(0.1, 0.1, 0.5, 0.9))],
            hands: vec![
                hand(bb(0.1, 0.4, 0.2, 0.5), HandSide::Left, Some(1)),
                hand(bb(0.4, 0.4, 0.5, 0.5), HandSide::Right, Some(1)),
            ],
        }
    }

    fn raw_ids(s: &TrackSession) -> Vec<u32> {
        s.entity_ids().iter().map(|id| id.raw()).collect()
    }

    #[test]
    fn init_assigns_hierarchical_ids() {
        let cfg = PipelineConfig::default();
        let s = init_tracks("v", &one_person_scene(), 8, &cfg).unwrap();
        assert_eq!(raw_ids(&s), [10, 11, 14, 1000]);
        let objects_only = FirstFrameDetections {
            objects: vec![
                det("a", bb(0.0, 0.0, 0.1, 0.1)),
                det("b", bb(0.2, 0.0, 0.3, 0.1)),
                det("c", bb(0.4, 0.0, 0.5, 0.1)),
            ],
            ..Default::default()
        };
        assert_eq!(
            raw_ids(&init_tracks("v", &objects_only, 8, &cfg).unwrap()),
            [1000, 1001, 1002]
        );
    }

    #[test]
    fn duplicate_objects_are_merged() {
        let cfg = PipelineConfig::default();
        let cup = bb(0.2, 0.2, 0.4, 0.4);
        let scene = FirstFrameDetections {
            objects: vec![det("cup", cup), det("cup", cup), det("ball", cup)],
            ..Default::default()
        };
        let s = init_tracks("v", &scene, 3, &cfg).unwrap();
        assert_eq!(raw_ids(&s), [1000, 1001]);
    }

    #[test]
    fn keyframes_every_fifth() {
        assert_eq!(keyframes(12, 5), [0, 5, 10]);
        assert_eq!(keyframes(1, 5), [0]);
        assert!(keyframes(0, 5).is_empty());
    }

    fn advance(s: &mut TrackSession, t: usize, boxes: &[(u32, Option<NormalizedBBox>)]) {
        s.apply_advance(
            t,
            &TrackAdvanceResponse {
                frame_index: t,
                boxes: boxes.iter().copied().collect(),
                mask_area: None,
            },
        );
    }

    #[test]
    fn tracklets_keep_absence_and_slot_count() {
        let cfg = PipelineConfig::default();
        let mut s = init_tracks("v", &one_person_scene(), 8, &cfg).unwrap();
        let cup = bb(0.6, 0.6, 0.7, 0.7);
        for t in 1..8 {
            let present = !(2..=4).contains(&t);
            advance(&mut s, t, &[(1000, present.then_some(cup))]);
        }
        // a second write to the same frame is ignored
        advance(&mut s, 3, &[(1000, Some(cup))]);
        let tracklets = assemble_tracklets(&s);
        assert_eq!(tracklets.len(), 4);
        assert!(tracklets.iter().all(|t| t.frame_count() == 8));
        let cup_t = tracklets.iter().find(|t| t.id.raw() == 1000).unwrap();
        let present: Vec<bool> = cup_t.boxes.iter().map(Option::is_some).collect();
        assert_eq!(present, [true, true, false, false, false, true, true, true]);
        let person = tracklets.iter().find(|t| t.id.raw() == 10).unwrap();
        assert!(person.boxes[1..].iter().all(Option::is_none));
    }

    #[test]
    fn contact_states_forward_fill() {
        let cfg = PipelineConfig::default();
        let mut s = init_tracks("v", &one_person_scene(), 8, &cfg).unwrap();
        let left = bb(0.1, 0.4, 0.2, 0.5);
        for t in 1..8 {
            advance(&mut s, t, &[(11, Some(left)), (10, Some(bb(0.1, 0.1, 0.5, 0.9)))]);
        }
        let mut fresh = hand(left, HandSide::Left, None);
        fresh.contact = ContactState::new(ContactKind::SelfContact, None).unwrap();
        for r in s.plan_refinement(5, &[fresh], &cfg) {
            s.apply_repin(5, &r);
        }
        let lt = assemble_tracklets(&s).into_iter().find(|t| t.id.raw() == 11).unwrap();
        let kinds: Vec<ContactKind> = (0..8).map(|t| lt.contact_at(t).unwrap().value()).collect();
        assert_eq!(&kinds[..5], [ContactKind::NoContact; 5]);
        assert_eq!(&kinds[5..], [ContactKind::SelfContact; 3]);
    }

    #[test]
    fn containment_fallback_creates_hand() {
        let cfg = PipelineConfig::default();
        let mut scene = one_person_scene();
        scene.hands.clear();
        let mut s = init_tracks("v", &scene, 6, &cfg).unwrap();
        assert_eq!(raw_ids(&s), [10, 1000]);
        for t in 1..6 {
            advance(&mut s, t, &[(10, Some(bb(0.1, 0.1, 0.5, 0.9)))]);
        }
        let plan = s.plan_refinement(5, &[hand(bb(0.3, 0.3, 0.35, 0.35), HandSide::Right, None)], &cfg);
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].id.raw(), 14);
        assert_eq!(plan[0].new_label.as_deref(), Some("right_hand"));
        // a hand outside every person box is dropped
        assert!(s
            .plan_refinement(5, &[hand(bb(0.8, 0.1, 0.9, 0.2), HandSide::Left, None)], &cfg)
            .is_empty());
    }

    #[test]
    fn refinement_is_idempotent_on_matching_boxes() {
        let cfg = PipelineConfig::default();
        let mut s = init_tracks("v", &one_person_scene(), 6, &cfg).unwrap();
        let left = bb(0.1, 0.4, 0.2, 0.5);
        let right = bb(0.4, 0.4, 0.5, 0.5);
        for t in 1..6 {
            advance(&mut s, t, &[(11, Some(left)), (14, Some(right))]);
        }
        let before = s.clone();
        let fresh = [hand(left, HandSide::Left, None), hand(right, HandSide::Right, None)];
        for r in s.plan_refinement(5, &fresh, &cfg) {
            s.apply_repin(5, &r);
        }
        assert_eq!(assemble_tracklets(&before), assemble_tracklets(&s));
    }

    #[test]
    fn held_object_repins_object_track() {
        let cfg = PipelineConfig::default();
        let mut s = init_tracks("v", &one_person_scene(), 6, &cfg).unwrap();
        let left = bb(0.1, 0.4, 0.2, 0.5);
        let drifted_cup = bb(0.62, 0.6, 0.72, 0.7);
        for t in 1..6 {
            advance(&mut s, t, &[(11, Some(left)), (1000, Some(drifted_cup))]);
        }
        let mut fresh = hand(left, HandSide::Left, None);
        fresh.contact = ContactState::holding(bb(0.6, 0.6, 0.7, 0.7));
        for r in s.plan_refinement(5, &[fresh], &cfg) {
            s.apply_repin(5, &r);
        }
        assert_eq!(
            s.box_at(5, EntityId::from_raw(1000).unwrap()),
            Some(bb(0.6, 0.6, 0.7, 0.7))
        );
    }
}
