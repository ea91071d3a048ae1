//! JSONL transcripts of every backend attempt, and a transport that serves
//! them back.
//!
//! Each line holds the request, its content hash, and either the response
//! envelope or the transport failure. Replay looks responses up by hash, so
//! request ids may differ between the recording and the replay.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::protocol::{Endpoint, WireRequest, WireResponse};
use super::{BackendError, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportFailure {
    /// `timeout` or `transport`; anything else replays as `transport`.
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub endpoint: Endpoint,
    #[serde(default)]
    pub video_id: Option<String>,
    pub request_hash: String,
    pub request: WireRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<WireResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<TransportFailure>,
}

struct RecorderState {
    out: BufWriter<File>,
    seq: u64,
    error: Option<String>,
}

/// Appends one line per attempt. Write failures are kept and reported by
/// [`Recorder::finish`] instead of failing the call being recorded.
pub struct Recorder {
    state: Mutex<RecorderState>,
}

impl Recorder {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            state: Mutex::new(RecorderState {
                out: BufWriter::new(File::create(path)?),
                seq: 0,
                error: None,
            }),
        })
    }

    pub fn record(&self, request: &WireRequest, outcome: &Result<WireResponse, BackendError>) {
        let mut st = self.state.lock().unwrap();
        let (response, transport_error) = match outcome {
            Ok(r) => (Some(r.clone()), None),
            Err(e) => (
                None,
                Some(TransportFailure {
                    kind: match e {
                        BackendError::Timeout { .. } => "timeout".into(),
                        _ => "transport".into(),
                    },
                    message: e.to_string(),
                }),
            ),
        };
        let entry = TranscriptEntry {
            seq: st.seq,
            endpoint: request.endpoint(),
            video_id: request.video_id.clone(),
            request_hash: request.content_hash(),
            request: request.clone(),
            response,
            transport_error,
        };
        st.seq += 1;
        let line = serde_json::to_string(&entry).expect("transcript entries serialize");
        let written = writeln!(st.out, "{line}").and_then(|_| st.out.flush());
        if let Err(e) = written {
            st.error.get_or_insert(e.to_string());
        }
    }

    pub fn entries_written(&self) -> u64 {
        self.state.lock().unwrap().seq
    }

    pub fn finish(&self) -> Result<(), String> {
        let mut st = self.state.lock().unwrap();
        st.out.flush().map_err(|e| e.to_string())?;
        match st.error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
        out.push(entry);
    }
    Ok(out)
}

enum Recorded {
    Response(WireResponse),
    Failure(TransportFailure),
}

struct ReplayQueue {
    pending: VecDeque<Recorded>,
    last_response: Option<WireResponse>,
}

/// Serves recorded outcomes in recording order per request hash. Once a
/// hash's queue is drained its last response is served again, since an
/// identical request is expected to get an identical answer. Unknown
/// hashes fail with [`BackendError::ReplayMiss`].
pub struct ReplayTransport {
    queues: Mutex<HashMap<String, ReplayQueue>>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut queues: HashMap<String, ReplayQueue> = HashMap::new();
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|e| e.seq);
        for e in entries {
            let q = queues.entry(e.request_hash).or_insert_with(|| ReplayQueue {
                pending: VecDeque::new(),
                last_response: None,
            });
            match (e.response, e.transport_error) {
                (Some(r), _) => q.pending.push_back(Recorded::Response(r)),
                (None, Some(f)) => q.pending.push_back(Recorded::Failure(f)),
                (None, None) => {}
            }
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    /// Loads every `*.jsonl` file in `dir`, or a single transcript file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let mut entries = Vec::new();
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| format!("{}: {e}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for f in files {
                entries.extend(load_transcript(&f)?);
            }
        } else {
            entries = load_transcript(path)?;
        }
        // seq restarts per file; keep file order by re-numbering
        for (i, e) in entries.iter_mut().enumerate() {
            e.seq = i as u64;
        }
        Ok(Self::from_entries(entries))
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let endpoint = request.endpoint();
        let hash = request.content_hash();
        let mut queues = self.queues.lock().unwrap();
        let Some(q) = queues.get_mut(&hash) else {
            return Err(BackendError::ReplayMiss { endpoint, hash });
        };
        let served = match q.pending.pop_front() {
            Some(Recorded::Response(r)) => {
                q.last_response = Some(r.clone());
                r
            }
            Some(Recorded::Failure(f)) => {
                return Err(match f.kind.as_str() {
                    "timeout" => BackendError::Timeout { endpoint },
                    _ => BackendError::Transport {
                        endpoint,
                        message: f.message,
                    },
                })
            }
            None => match &q.last_response {
                Some(r) => r.clone(),
                None => return Err(BackendError::ReplayMiss { endpoint, hash }),
            },
        };
        Ok(WireResponse {
            id: request.id.clone(),
            outcome: served.outcome,
        })
    }
}
