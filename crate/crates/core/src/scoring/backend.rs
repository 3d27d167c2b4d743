use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::http::HttpBackend;
use super::ngram::{byte_token, NgramModel};
use super::wire::{ScoreRequest, TokenScores};
use super::ScoreError;

/// Source of per-token continuation log-probabilities.
///
/// Implementations must be safe to call concurrently and return identical
/// answers for identical requests.
pub trait ScoringBackend: Send + Sync {
    fn score(&self, context: &str, continuation: &str) -> Result<TokenScores, ScoreError>;

    /// Scores many requests, preserving order.
    fn score_batch(&self, items: &[ScoreRequest]) -> Result<Vec<TokenScores>, ScoreError> {
        items
            .iter()
            .map(|r| self.score(&r.context, &r.continuation))
            .collect()
    }

    fn describe(&self) -> String;
}

fn default_order() -> usize {
    2
}

fn default_smoothing() -> f64 {
    1.0
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_batch_size() -> usize {
    16
}

/// Serializable backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    NgramToy {
        /// Training corpus; the bundled seed corpus when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        corpus: Option<PathBuf>,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_smoothing")]
        smoothing: f64,
    },
    Http {
        base_url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        BackendDescriptor::NgramToy {
            corpus: None,
            order: default_order(),
            smoothing: default_smoothing(),
        }
    }
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), ScoreError> {
        match self {
            BackendDescriptor::NgramToy { smoothing, .. } => {
                if !(smoothing.is_finite() && *smoothing > 0.0) {
                    return Err(ScoreError::InvalidDescriptor("smoothing constant must be positive".into()));
                }
            }
            BackendDescriptor::Http {
                base_url,
                timeout_ms,
                batch_size,
            } => {
                if base_url.trim().is_empty() {
                    return Err(ScoreError::InvalidDescriptor("base_url is empty".into()));
                }
                if *batch_size == 0 || *timeout_ms == 0 {
                    return Err(ScoreError::InvalidDescriptor("batch_size and timeout_ms must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Instantiates the backend. `corpus_text` overrides reading `corpus`
    /// from disk.
    pub fn build(&self, corpus_text: Option<&[u8]>) -> Result<Box<dyn ScoringBackend>, ScoreError> {
        self.validate()?;
        Ok(match self {
            BackendDescriptor::NgramToy { corpus, order, smoothing } => {
                let bytes = match (corpus_text, corpus) {
                    (Some(text), _) => text.to_vec(),
                    (None, Some(path)) => std::fs::read(path).map_err(|e| {
                        ScoreError::InvalidDescriptor(format!("cannot read corpus {}: {e}", path.display()))
                    })?,
                    (None, None) => super::ngram::SEED_CORPUS.as_bytes().to_vec(),
                };
                Box::new(NgramModel::train(&bytes, *order, *smoothing))
            }
            BackendDescriptor::Http {
                base_url,
                timeout_ms,
                batch_size,
            } => Box::new(HttpBackend::new(base_url, *timeout_ms, *batch_size)?),
        })
    }
}

/// Byte-tokenizing backend assigning every token probability `1 / vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformBackend {
    pub vocab_size: usize,
}

impl ScoringBackend for UniformBackend {
    fn score(&self, _context: &str, continuation: &str) -> Result<TokenScores, ScoreError> {
        if continuation.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        let lp = -(self.vocab_size as f64).ln();
        let tokens: Vec<String> = continuation.bytes().map(byte_token).collect();
        let logprobs = vec![lp; tokens.len()];
        Ok(TokenScores { tokens, logprobs })
    }

    fn describe(&self) -> String {
        format!("uniform(V={})", self.vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_single_token() {
        let b = UniformBackend { vocab_size: 7 };
        let s = b.score("ctx", "x").unwrap();
        assert_eq!(s.tokens, ["x"]);
        assert_eq!(s.logprobs, [-(7f64).ln()]);
        assert_eq!(b.score("ctx", "").unwrap_err(), ScoreError::EmptyContinuation);
    }

    #[test]
    fn descriptor_json() {
        let d: BackendDescriptor = serde_json::from_str(r#"{"kind":"ngram_toy"}"#).unwrap();
        assert_eq!(d, BackendDescriptor::default());
        let d: BackendDescriptor =
            serde_json::from_str(r#"{"kind":"http","base_url":"http://127.0.0.1:9"}"#).unwrap();
        assert!(matches!(d, BackendDescriptor::Http { batch_size: 16, .. }));
        let bad = BackendDescriptor::NgramToy {
            corpus: None,
            order: 2,
            smoothing: 0.0,
        };
        assert!(bad.validate().is_err());
        let bad = BackendDescriptor::Http {
            base_url: "x".into(),
            timeout_ms: 10,
            batch_size: 0,
        };
        assert!(bad.validate().is_err());
    }
}
