use std::time::Duration;

use reqwest::blocking::Client;
use serde::{de::DeserializeOwned, Serialize};

use super::wire::{BatchRequest, BatchResponse, HealthStatus, ScoreRequest, TokenScores};
use super::{ScoreError, ScoringBackend};

/// Client for a remote service speaking the `/v1/score` protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    batch_size: usize,
    client: Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout_ms: u64, batch_size: usize) -> Result<Self, ScoreError> {
        let client = Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| ScoreError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            batch_size: batch_size.max(1),
            client,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ScoreError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ScoreError::BackendUnavailable(format!("POST {url}: {e}")))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let text = resp.text().unwrap_or_default();
            return Err(ScoreError::BackendUnavailable(format!("POST {url}: HTTP {status}: {text}")));
        }
        resp.json()
            .map_err(|e| ScoreError::BackendUnavailable(format!("POST {url}: bad response body: {e}")))
    }

    pub fn health(&self) -> Result<HealthStatus, ScoreError> {
        let url = format!("{}/health", self.base_url);
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| ScoreError::BackendUnavailable(format!("GET {url}: {e}")))?;
        if resp.status() != reqwest::StatusCode::OK {
            return Err(ScoreError::BackendUnavailable(format!("GET {url}: HTTP {}", resp.status())));
        }
        resp.json()
            .map_err(|e| ScoreError::BackendUnavailable(format!("GET {url}: bad response body: {e}")))
    }
}

impl ScoringBackend for HttpBackend {
    fn score(&self, context: &str, continuation: &str) -> Result<TokenScores, ScoreError> {
        if continuation.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        let req = ScoreRequest {
            context: context.to_string(),
            continuation: continuation.to_string(),
        };
        self.post("/v1/score", &req)
    }

    fn score_batch(&self, items: &[ScoreRequest]) -> Result<Vec<TokenScores>, ScoreError> {
        if items.iter().any(|r| r.continuation.is_empty()) {
            return Err(ScoreError::EmptyContinuation);
        }
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            let body = BatchRequest { items: chunk.to_vec() };
            let resp: BatchResponse = self.post("/v1/score_batch", &body)?;
            if resp.results.len() != chunk.len() {
                return Err(ScoreError::BatchMismatch {
                    expected: chunk.len(),
                    got: resp.results.len(),
                });
            }
            out.extend(resp.results);
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("http({})", self.base_url)
    }
}
