//! Model-service wire protocol, the retrying client, deterministic mocks,
//! and record/replay transcripts. This is the only module that talks to the
//! network.

mod client;
pub mod conformance;
mod http;
pub mod mock;
pub mod protocol;
pub mod transcript;

use thiserror::Error;

pub use client::{BackendClient, CallPolicy, FrameMode};
pub use http::{HttpConfig, HttpTransport};
pub use mock::{MockBackend, MockScript};
pub use protocol::{Endpoint, FrameRef, RequestBody, ResponseBody, WireRequest, WireResponse};
pub use transcript::{Recorder, ReplayTransport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{endpoint}: schema violation: {detail}")]
    Schema { endpoint: Endpoint, detail: String },
    #[error("{endpoint}: timed out")]
    Timeout { endpoint: Endpoint },
    #[error("{endpoint}: transient failure: {message}")]
    Transient { endpoint: Endpoint, message: String },
    #[error("{endpoint}: remote error: {message}")]
    Remote { endpoint: Endpoint, message: String },
    #[error("{endpoint}: transport error: {message}")]
    Transport { endpoint: Endpoint, message: String },
    #[error("{endpoint}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: Endpoint,
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("{endpoint}: mock script exhausted")]
    ScriptExhausted { endpoint: Endpoint },
    #[error("{endpoint}: no recorded response for request {hash}")]
    ReplayMiss { endpoint: Endpoint, hash: String },
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout { .. } | BackendError::Transient { .. } | BackendError::Transport { .. }
        )
    }
}

/// Moves one request to a model service and returns its raw response.
pub trait Transport: Send + Sync {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, BackendError>;
}
