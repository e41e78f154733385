//! Client for an external text-encoder service.
//!
//! The service receives `POST {"texts": [...]}` and must answer with
//! `{"embeddings": [[...], ...]}`, one row per text, in request order.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::{Error, Result};

#[derive(Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EncoderClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl EncoderClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, Duration::from_secs(60))
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        EncoderClient {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Encodes `prompts`; the returned set is keyed by the prompt strings.
    pub fn encode(&self, prompts: &[String]) -> Result<EmbeddingSet> {
        if prompts.is_empty() {
            return Err(Error::invalid("no prompts to encode"));
        }
        let body = serde_json::to_string(&EncodeRequest { texts: prompts })
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        if !(200..300).contains(&status) {
            return Err(Error::Status { status, body: text });
        }
        let parsed: EncodeResponse = serde_json::from_str(&text).map_err(|e| {
            Error::Transport(format!("{}: malformed encoder response: {e}", self.endpoint))
        })?;
        if parsed.embeddings.len() != prompts.len() {
            return Err(Error::shape(format!(
                "sent {} prompts but encoder returned {} embeddings",
                prompts.len(),
                parsed.embeddings.len()
            )));
        }
        EmbeddingSet::from_rows(prompts.iter().cloned().zip(parsed.embeddings))
    }
}

/// One-shot form of [`EncoderClient::encode`].
pub fn fetch_embeddings(endpoint: &str, prompts: &[String]) -> Result<EmbeddingSet> {
    EncoderClient::new(endpoint).encode(prompts)
}
