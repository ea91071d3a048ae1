use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{Endpoint, WireRequest, WireResponse};
use super::{BackendError, Transport};

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; endpoint paths such as `/ground` are appended.
    pub base_url: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    120_000
}

/// POSTs request envelopes as JSON. 5xx and 429 count as transient, other
/// non-2xx statuses as remote failures.
pub struct HttpTransport {
    agent: ureq::Agent,
    config: HttpConfig,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config }
    }

    pub fn url(&self, endpoint: Endpoint) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint.path())
    }
}

fn map_error(endpoint: Endpoint, e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout { endpoint },
        other => BackendError::Transport {
            endpoint,
            message: other.to_string(),
        },
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, BackendError> {
        let endpoint = request.endpoint();
        let mut req = self.agent.post(self.url(endpoint));
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| map_error(endpoint, e))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_string()
            .map_err(|e| map_error(endpoint, e))?;
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient {
                endpoint,
                message: format!("HTTP {status}: {}", truncate(&body)),
            });
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Remote {
                endpoint,
                message: format!("HTTP {status}: {}", truncate(&body)),
            });
        }
        serde_json::from_str(&body).map_err(|e| BackendError::Schema {
            endpoint,
            detail: format!("response envelope: {e}"),
        })
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
