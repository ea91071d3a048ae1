use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::protocol::*;
use super::transcript::Recorder;
use super::{BackendError, Transport};
use crate::camera::CameraPose;
use crate::model::NormalizedBBox;
use crate::preprocess::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CallPolicy {
    /// Total attempts per call, counting the first.
    pub max_attempts: u32,
    /// Concurrent requests allowed per endpoint; 0 means unlimited.
    pub in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for CallPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            in_flight: 4,
            timeout_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum FrameMode {
    #[default]
    Encoded,
    /// Frames are written as PNG under this directory and sent by path.
    SharedPath(PathBuf),
}

#[derive(Default)]
struct Limiter {
    active: Mutex<HashMap<Endpoint, usize>>,
    freed: Condvar,
}

struct Permit<'a> {
    limiter: &'a Limiter,
    endpoint: Endpoint,
}

impl Limiter {
    fn acquire(&self, endpoint: Endpoint, cap: usize) -> Option<Permit<'_>> {
        if cap == 0 {
            return None;
        }
        let mut active = self.active.lock().unwrap();
        while active.get(&endpoint).copied().unwrap_or(0) >= cap {
            active = self.freed.wait(active).unwrap();
        }
        *active.entry(endpoint).or_default() += 1;
        Some(Permit {
            limiter: self,
            endpoint,
        })
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().unwrap();
        if let Some(n) = active.get_mut(&self.endpoint) {
            *n -= 1;
        }
        self.limiter.freed.notify_all();
    }
}

struct Shared {
    transport: Arc<dyn Transport>,
    policy: CallPolicy,
    limiter: Limiter,
    frame_mode: FrameMode,
}

/// Typed, retrying client over a [`Transport`]. Cheap to clone; clones share
/// the transport and in-flight limits. [`BackendClient::scoped`] gives a
/// per-video view with its own request numbering and transcript.
#[derive(Clone)]
pub struct BackendClient {
    shared: Arc<Shared>,
    video_id: Option<String>,
    seq: Arc<AtomicU64>,
    recorder: Option<Arc<Recorder>>,
}

impl BackendClient {
    pub fn new(transport: Arc<dyn Transport>, policy: CallPolicy) -> Self {
        Self::with_frame_mode(transport, policy, FrameMode::Encoded)
    }

    pub fn with_frame_mode(transport: Arc<dyn Transport>, policy: CallPolicy, frame_mode: FrameMode) -> Self {
        Self {
            shared: Arc::new(Shared {
                transport,
                policy,
                limiter: Limiter::default(),
                frame_mode,
            }),
            video_id: None,
            seq: Arc::new(AtomicU64::new(0)),
            recorder: None,
        }
    }

    pub fn scoped(&self, video_id: &str, recorder: Option<Arc<Recorder>>) -> Self {
        Self {
            shared: self.shared.clone(),
            video_id: Some(video_id.to_string()),
            seq: Arc::new(AtomicU64::new(0)),
            recorder,
        }
    }

    pub fn with_recorder(mut self, recorder: Arc<Recorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn recorder(&self) -> Option<Arc<Recorder>> {
        self.recorder.clone()
    }

    pub fn video_id(&self) -> Option<&str> {
        self.video_id.as_deref()
    }

    /// Number of requests issued through this scope.
    pub fn requests_issued(&self) -> u64 {
        self.seq.load(Ordering::SeqCst)
    }

    pub fn frame_ref(&self, frame: &Frame) -> Result<FrameRef, BackendError> {
        match &self.shared.frame_mode {
            FrameMode::Encoded => Ok(FrameRef::inline_png(frame.index, frame.timestamp, &frame.png())),
            FrameMode::SharedPath(dir) => {
                let dir = dir.join(self.video_id.as_deref().unwrap_or("_"));
                let path = dir.join(format!("{:06}.png", frame.index));
                if !path.exists() {
                    std::fs::create_dir_all(&dir)
                        .and_then(|_| std::fs::write(&path, frame.png().as_slice()))
                        .map_err(|e| BackendError::Transport {
                            endpoint: Endpoint::Describe,
                            message: format!("writing shared frame {}: {e}", path.display()),
                        })?;
                }
                Ok(FrameRef {
                    index: frame.index,
                    timestamp: frame.timestamp,
                    data: FrameData::Path {
                        path: path.display().to_string(),
                    },
                })
            }
        }
    }

    /// Sends one request, retrying transient failures with the identical
    /// payload, and returns the schema-checked response.
    pub fn call(&self, body: RequestBody) -> Result<ResponseBody, BackendError> {
        let endpoint = body.endpoint();
        let n = self.seq.fetch_add(1, Ordering::SeqCst);
        let request = WireRequest {
            id: format!("{}-{n:06}", self.video_id.as_deref().unwrap_or("req")),
            video_id: self.video_id.clone(),
            body,
        };
        let _permit = self.shared.limiter.acquire(endpoint, self.shared.policy.in_flight);
        let attempts = self.shared.policy.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            let sent = self.shared.transport.send(&request);
            if let Some(rec) = &self.recorder {
                rec.record(&request, &sent);
            }
            match self.interpret(&request, sent) {
                Ok(body) => {
                    if attempt > 1 {
                        log::info!("{endpoint} {} succeeded after {} retries", request.id, attempt - 1);
                    }
                    return Ok(body);
                }
                Err(e) if e.is_transient() => {
                    log::warn!("{endpoint} {} attempt {attempt}/{attempts}: {e}", request.id);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        let last = last.expect("at least one attempt");
        if attempts == 1 {
            return Err(last);
        }
        Err(BackendError::Exhausted {
            endpoint,
            attempts,
            last: Box::new(last),
        })
    }

    fn interpret(
        &self,
        request: &WireRequest,
        sent: Result<WireResponse, BackendError>,
    ) -> Result<ResponseBody, BackendError> {
        let endpoint = request.endpoint();
        let response = sent?;
        if response.id != request.id {
            return Err(BackendError::Schema {
                endpoint,
                detail: format!("response id {} does not echo request id {}", response.id, request.id),
            });
        }
        match response.outcome {
            Ok(payload) => {
                ResponseBody::decode(&request.body, payload).map_err(|detail| BackendError::Schema { endpoint, detail })
            }
            Err(e) => Err(match e.kind {
                WireErrorKind::Transient => BackendError::Transient {
                    endpoint,
                    message: e.message,
                },
                WireErrorKind::Timeout => BackendError::Timeout { endpoint },
                WireErrorKind::Fatal => BackendError::Remote {
                    endpoint,
                    message: e.message,
                },
            }),
        }
    }

    fn mismatch(endpoint: Endpoint, got: &ResponseBody) -> BackendError {
        BackendError::Schema {
            endpoint,
            detail: format!("unexpected response kind {got:?}"),
        }
    }

    pub fn describe(&self, frame: FrameRef) -> Result<String, BackendError> {
        match self.call(RequestBody::Describe(FramePayload { frame }))? {
            ResponseBody::Text(t) => Ok(t.text),
            other => Err(Self::mismatch(Endpoint::Describe, &other)),
        }
    }

    pub fn ground(&self, frame: FrameRef, class_name: &str) -> Result<Vec<WireDetection>, BackendError> {
        match self.call(RequestBody::Ground(GroundRequest {
            frame,
            class_name: class_name.to_string(),
        }))? {
            ResponseBody::Detections(d) => Ok(d.detections),
            other => Err(Self::mismatch(Endpoint::Ground, &other)),
        }
    }

    pub fn persons(&self, frame: FrameRef) -> Result<Vec<WireDetection>, BackendError> {
        match self.call(RequestBody::Persons(FramePayload { frame }))? {
            ResponseBody::Detections(d) => Ok(d.detections),
            other => Err(Self::mismatch(Endpoint::Persons, &other)),
        }
    }

    pub fn pose(&self, frame: FrameRef, person_box: NormalizedBBox) -> Result<PoseResponse, BackendError> {
        match self.call(RequestBody::Pose(PoseRequest { frame, person_box }))? {
            ResponseBody::Pose(p) => Ok(p),
            other => Err(Self::mismatch(Endpoint::Pose, &other)),
        }
    }

    pub fn hands(&self, frame: FrameRef) -> Result<Vec<WireHand>, BackendError> {
        match self.call(RequestBody::Hands(FramePayload { frame }))? {
            ResponseBody::Hands(h) => Ok(h.hands),
            other => Err(Self::mismatch(Endpoint::Hands, &other)),
        }
    }

    pub fn camera_poses(&self, frames: Vec<FrameRef>) -> Result<Vec<CameraPose>, BackendError> {
        match self.call(RequestBody::CameraPoses(CameraPosesRequest { frames }))? {
            ResponseBody::CameraPoses(p) => Ok(p.poses),
            other => Err(Self::mismatch(Endpoint::CameraPoses, &other)),
        }
    }

    pub fn track_register(
        &self,
        session: &str,
        frame: FrameRef,
        entity_id: u32,
        bbox: NormalizedBBox,
    ) -> Result<(), BackendError> {
        match self.call(RequestBody::TrackRegister(TrackRegisterRequest {
            session: session.to_string(),
            frame,
            entity_id,
            bbox,
        }))? {
            ResponseBody::Ack(AckResponse { ok: true }) => Ok(()),
            ResponseBody::Ack(_) => Err(BackendError::Remote {
                endpoint: Endpoint::TrackRegister,
                message: format!("registration of {entity_id} refused"),
            }),
            other => Err(Self::mismatch(Endpoint::TrackRegister, &other)),
        }
    }

    pub fn track_advance(&self, session: &str, frame: FrameRef) -> Result<TrackAdvanceResponse, BackendError> {
        match self.call(RequestBody::TrackAdvance(TrackAdvanceRequest {
            session: session.to_string(),
            frame,
        }))? {
            ResponseBody::TrackAdvance(r) => Ok(r),
            other => Err(Self::mismatch(Endpoint::TrackAdvance, &other)),
        }
    }

    fn text(&self, body: RequestBody) -> Result<String, BackendError> {
        let endpoint = body.endpoint();
        match self.call(body)? {
            ResponseBody::Text(t) => Ok(t.text),
            other => Err(Self::mismatch(endpoint, &other)),
        }
    }

    pub fn llm(&self, request: TextRequest) -> Result<String, BackendError> {
        self.text(RequestBody::Llm(request))
    }

    pub fn judge(&self, request: TextRequest) -> Result<String, BackendError> {
        self.text(RequestBody::Judge(request))
    }

    pub fn answer(&self, request: TextRequest) -> Result<String, BackendError> {
        self.text(RequestBody::Answer(request))
    }
}
