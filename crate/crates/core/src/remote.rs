//! Blocking JSON-over-HTTP helper shared by the remote provider clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub(crate) enum RemoteError {
    /// Connection failure, timeout or non-2xx status.
    Transport(String),
    /// The service answered but the body did not match the contract.
    Malformed(String),
}

impl std::fmt::Display for RemoteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RemoteError::Transport(m) => write!(f, "transport: {m}"),
            RemoteError::Malformed(m) => write!(f, "malformed response: {m}"),
        }
    }
}

#[derive(Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("endpoint", &self.endpoint).finish()
    }
}

impl JsonClient {
    pub(crate) fn new(endpoint: &str, timeout_ms: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
            .build()
            .into();
        JsonClient {
            agent,
            endpoint: endpoint.to_string(),
        }
    }

    pub(crate) fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, RemoteError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| RemoteError::Malformed(e.to_string()))
    }
}
