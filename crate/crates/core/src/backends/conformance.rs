//! Checks any [`Transport`] against the wire protocol: one well-formed
//! request per endpoint (id echoed, payload matches its schema) plus a
//! tracker case on a static clip, which must keep its boxes still.

use super::protocol::*;
use super::Transport;
use crate::model::NormalizedBBox;
use crate::preprocess::{encode_png, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConformanceReport {
    pub cases: Vec<CaseResult>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

pub const CONFORMANCE_VIDEO: &str = "conformance";
const STATIC_FRAMES: usize = 4;

/// 64×48 frame: gray background, a red block (the "object") and a blue
/// block (the "person").
pub fn conformance_frame() -> Raster {
    let mut r = Raster::filled(64, 48, [90, 90, 90]);
    r.fill_rect(8.0, 8.0, 24.0, 24.0, [220, 30, 30]);
    r.fill_rect(36.0, 4.0, 56.0, 44.0, [30, 30, 220]);
    r
}

pub fn object_box() -> NormalizedBBox {
    NormalizedBBox::new(8.0 / 64.0, 8.0 / 48.0, 24.0 / 64.0, 24.0 / 48.0).expect("valid")
}

pub fn person_box() -> NormalizedBBox {
    NormalizedBBox::new(36.0 / 64.0, 4.0 / 48.0, 56.0 / 64.0, 44.0 / 48.0).expect("valid")
}

fn frame(index: usize) -> FrameRef {
    FrameRef::inline_png(index, index as f64 * 0.5, &encode_png(&conformance_frame()))
}

/// One valid request per endpoint, in protocol order. The tracker
/// register request is included; advance requests belong to the static
/// clip case.
pub fn conformance_cases() -> Vec<(String, RequestBody)> {
    let f = || FramePayload { frame: frame(0) };
    vec![
        ("describe".into(), RequestBody::Describe(f())),
        (
            "ground".into(),
            RequestBody::Ground(GroundRequest {
                frame: frame(0),
                class_name: "box".into(),
            }),
        ),
        ("persons".into(), RequestBody::Persons(f())),
        (
            "pose".into(),
            RequestBody::Pose(PoseRequest {
                frame: frame(0),
                person_box: person_box(),
            }),
        ),
        ("hands".into(), RequestBody::Hands(f())),
        (
            "camera_poses".into(),
            RequestBody::CameraPoses(CameraPosesRequest {
                frames: (0..STATIC_FRAMES).map(frame).collect(),
            }),
        ),
        (
            "llm".into(),
            RequestBody::Llm(TextRequest::prompt("Describe the motion.")),
        ),
        (
            "judge".into(),
            RequestBody::Judge(TextRequest::prompt("Rate the questions.")),
        ),
        (
            "answer".into(),
            RequestBody::Answer(TextRequest {
                frames: vec![frame(0)],
                ..TextRequest::prompt("Q: What moves?\nA. a\nB. b\nC. c\nD. d\nAnswer with the letter only.")
            }),
        ),
    ]
}

fn exchange(transport: &dyn Transport, id: &str, body: RequestBody) -> Result<ResponseBody, String> {
    let request = WireRequest {
        id: id.into(),
        video_id: Some(CONFORMANCE_VIDEO.into()),
        body,
    };
    let response = transport.send(&request).map_err(|e| e.to_string())?;
    if response.id != request.id {
        return Err(format!("id not echoed: sent {:?}, got {:?}", request.id, response.id));
    }
    let payload = response
        .outcome
        .map_err(|e| format!("error reply ({:?}): {}", e.kind, e.message))?;
    ResponseBody::decode(&request.body, payload)
}

pub fn run_conformance(transport: &dyn Transport) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let mut push = |name: String, r: Result<String, String>| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        report.cases.push(CaseResult { name, passed, detail });
    };
    for (i, (name, body)) in conformance_cases().into_iter().enumerate() {
        let r = exchange(transport, &format!("conf-{i:03}"), body).map(|_| "ok".to_string());
        push(name, r);
    }
    push("tracker_static_clip".into(), static_clip(transport));
    report
}

fn static_clip(transport: &dyn Transport) -> Result<String, String> {
    let session = "conformance-static".to_string();
    let registered = [(1000u32, object_box()), (0u32, person_box())];
    for (n, (id, bbox)) in registered.iter().enumerate() {
        exchange(
            transport,
            &format!("conf-reg-{n}"),
            RequestBody::TrackRegister(TrackRegisterRequest {
                session: session.clone(),
                frame: frame(0),
                entity_id: *id,
                bbox: *bbox,
            }),
        )?;
    }
    for t in 1..STATIC_FRAMES {
        let reply = exchange(
            transport,
            &format!("conf-adv-{t}"),
            RequestBody::TrackAdvance(TrackAdvanceRequest {
                session: session.clone(),
                frame: frame(t),
            }),
        )?;
        let ResponseBody::TrackAdvance(adv) = reply else {
            return Err("advance reply has the wrong shape".into());
        };
        for (id, want) in &registered {
            let got = adv
                .boxes
                .get(id)
                .copied()
                .flatten()
                .ok_or_else(|| format!("frame {t}: entity {id} missing"))?;
            let drift = got
                .to_array()
                .iter()
                .zip(want.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if drift > 1e-6 {
                return Err(format!("frame {t}: entity {id} drifted by {drift:.2e}"));
            }
        }
    }
    Ok(format!("{} frames static", STATIC_FRAMES))
}
