//! Contracts for the four external model services.
//!
//! Backends implement the small traits below; callers go through
//! [`Gateway`], which enforces preconditions and output shapes so that every
//! backend, mock or remote, is held to the same contract.

pub mod http;
pub mod mock;

use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts;
use crate::types::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Embedder,
    Llm,
    Reranker,
    WebSearch,
}

impl Service {
    pub fn as_str(self) -> &'static str {
        match self {
            Service::Embedder => "embedder",
            Service::Llm => "llm",
            Service::Reranker => "reranker",
            Service::WebSearch => "websearch",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ErrorKind {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

impl ErrorKind {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ErrorKind::Transport(_) => true,
            ErrorKind::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{service} service: {kind}")]
pub struct GatewayError {
    pub service: Service,
    pub kind: ErrorKind,
}

impl GatewayError {
    pub fn new(service: Service, kind: ErrorKind) -> Self {
        Self { service, kind }
    }

    pub fn precondition(service: Service, msg: impl Into<String>) -> Self {
        Self::new(service, ErrorKind::Precondition(msg.into()))
    }

    pub fn decode(service: Service, msg: impl Into<String>) -> Self {
        Self::new(service, ErrorKind::Decode(msg.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
    pub score: f64,
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

pub trait Generator: Send + Sync {
    fn complete(&self, prompt: &str, system: &str) -> Result<String, GatewayError>;
}

pub trait Reranker: Send + Sync {
    fn rerank_scores(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, GatewayError>;
}

pub trait WebSearch: Send + Sync {
    fn web_search(&self, query: &str, top_k: usize) -> Result<Vec<WebResult>, GatewayError>;
}

/// One gateway invocation. For the generator, `detail` is the prompt
/// directive; for other services it is the number of inputs or the query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub service: Service,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct CallLog(Mutex<Vec<CallRecord>>);

impl CallLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn push(&self, service: Service, detail: String) {
        self.0.lock().push(CallRecord { service, detail });
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.0.lock().clone()
    }

    pub fn clear(&self) {
        self.0.lock().clear();
    }

    /// Number of generator calls made with the given directive.
    pub fn directive_count(&self, directive: &str) -> usize {
        self.0
            .lock()
            .iter()
            .filter(|r| r.service == Service::Llm && r.detail == directive)
            .count()
    }

    pub fn service_count(&self, service: Service) -> usize {
        self.0
            .lock()
            .iter()
            .filter(|r| r.service == service)
            .count()
    }
}

#[derive(Clone)]
pub struct Gateway {
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    reranker: Arc<dyn Reranker>,
    web: Arc<dyn WebSearch>,
    log: Option<Arc<CallLog>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("logging", &self.log.is_some())
            .finish()
    }
}

impl Gateway {
    pub fn new(
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn Generator>,
        reranker: Arc<dyn Reranker>,
        web: Arc<dyn WebSearch>,
    ) -> Self {
        Self {
            embedder,
            generator,
            reranker,
            web,
            log: None,
        }
    }

    pub fn with_call_log(mut self, log: Arc<CallLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn call_log(&self) -> Option<&Arc<CallLog>> {
        self.log.as_ref()
    }

    fn record(&self, service: Service, detail: impl FnOnce() -> String) {
        if let Some(log) = &self.log {
            log.push(service, detail());
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let svc = Service::Embedder;
        if texts.is_empty() {
            return Err(GatewayError::precondition(svc, "texts must be non-empty"));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::precondition(
                svc,
                format!("text {i} is empty"),
            ));
        }
        self.record(svc, || texts.len().to_string());
        let out = self.embedder.embed(texts)?;
        if out.len() != texts.len() {
            return Err(GatewayError::decode(
                svc,
                format!("expected {} vectors, got {}", texts.len(), out.len()),
            ));
        }
        if let Some(first) = out.first() {
            if out.iter().any(|v| v.dim() != first.dim()) {
                return Err(GatewayError::decode(svc, "vectors of mixed dimension"));
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let mut v = self.embed(&[text.to_owned()])?;
        Ok(v.pop().expect("shape checked"))
    }

    pub fn complete(&self, prompt: &str, system: &str) -> Result<String, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::precondition(
                Service::Llm,
                "prompt must be non-empty",
            ));
        }
        self.record(Service::Llm, || {
            prompts::directive(system).unwrap_or("").to_owned()
        });
        self.generator.complete(prompt, system)
    }

    pub fn rerank_scores(
        &self,
        query: &str,
        passages: &[String],
    ) -> Result<Vec<f64>, GatewayError> {
        let svc = Service::Reranker;
        if passages.is_empty() {
            return Err(GatewayError::precondition(
                svc,
                "passages must be non-empty",
            ));
        }
        self.record(svc, || passages.len().to_string());
        let scores = self.reranker.rerank_scores(query, passages)?;
        if scores.len() != passages.len() {
            return Err(GatewayError::decode(
                svc,
                format!("expected {} scores, got {}", passages.len(), scores.len()),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(GatewayError::decode(svc, "non-finite score"));
        }
        Ok(scores)
    }

    pub fn web_search(&self, query: &str, top_k: usize) -> Result<Vec<WebResult>, GatewayError> {
        let svc = Service::WebSearch;
        if top_k == 0 {
            return Err(GatewayError::precondition(svc, "top_k must be at least 1"));
        }
        self.record(svc, || query.to_owned());
        let mut results = self.web.web_search(query, top_k)?;
        if results.iter().any(|r| r.url.is_empty()) {
            return Err(GatewayError::decode(svc, "result without url"));
        }
        results.truncate(top_k);
        Ok(results)
    }
}
