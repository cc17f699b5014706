//! HTTP backends speaking OpenAI-compatible embeddings and chat completions,
//! a configurable rerank shape, and a Tavily-style search endpoint.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Embedder, ErrorKind, Gateway, GatewayError, Generator, Reranker, Service, WebResult, WebSearch,
};
use crate::types::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_seconds: u64,
    pub retry_count: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            timeout_seconds: 30,
            retry_count: 2,
            backoff_ms: 200,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self, service: Service) -> Result<(), String> {
        if self.timeout_seconds == 0 {
            return Err(format!("{service}: timeout_seconds must be positive"));
        }
        Ok(())
    }
}

/// Field names for the rerank request and response.
///
/// The response field may hold either a list of plain scores in passage
/// order or a list of objects carrying an index and a score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankShape {
    pub path: String,
    pub query_field: String,
    pub documents_field: String,
    pub results_field: String,
    pub index_field: String,
    pub score_field: String,
}

impl Default for RerankShape {
    fn default() -> Self {
        Self {
            path: "/rerank".into(),
            query_field: "query".into(),
            documents_field: "documents".into(),
            results_field: "results".into(),
            index_field: "index".into(),
            score_field: "relevance_score".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub embedder: ServiceConfig,
    pub llm: ServiceConfig,
    pub reranker: ServiceConfig,
    pub websearch: ServiceConfig,
    pub rerank_shape: RerankShape,
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.embedder.validate(Service::Embedder)?;
        self.llm.validate(Service::Llm)?;
        self.reranker.validate(Service::Reranker)?;
        self.websearch.validate(Service::WebSearch)
    }
}

pub fn api_key_var(service: Service) -> &'static str {
    match service {
        Service::Embedder => "EMBEDDER_API_KEY",
        Service::Llm => "LLM_API_KEY",
        Service::Reranker => "RERANKER_API_KEY",
        Service::WebSearch => "WEBSEARCH_API_KEY",
    }
}

/// JSON POST client with bounded retries on transient failures.
#[derive(Debug, Clone)]
pub struct HttpClient {
    service: Service,
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    retry_count: u32,
    backoff: Duration,
}

impl HttpClient {
    /// Reads the API key from the service's environment variable.
    pub fn new(service: Service, cfg: &ServiceConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(api_key_var(service))
            .ok()
            .filter(|k| !k.is_empty());
        Self::with_api_key(service, cfg, api_key)
    }

    pub fn with_api_key(
        service: Service,
        cfg: &ServiceConfig,
        api_key: Option<String>,
    ) -> Result<Self, GatewayError> {
        cfg.validate(service)
            .map_err(|m| GatewayError::precondition(service, m))?;
        if cfg.base_url.is_empty() {
            return Err(GatewayError::precondition(
                service,
                "base_url is not configured",
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            service,
            agent,
            base_url: cfg.base_url.trim_end_matches('/').to_owned(),
            api_key,
            retry_count: cfg.retry_count,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, ErrorKind> {
        let mut req = self.agent.post(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ErrorKind::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ErrorKind::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            let body: String = text.chars().take(256).collect();
            return Err(ErrorKind::Status { code, body });
        }
        serde_json::from_str(&text).map_err(|e| ErrorKind::Decode(e.to_string()))
    }

    /// POST `body` to `path`; transient failures are retried `retry_count`
    /// times with doubling backoff before the last error is returned.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}{}", self.base_url, path);
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, body) {
                Ok(v) => return Ok(v),
                Err(kind) if kind.is_transient() && attempt < self.retry_count => {
                    tracing::warn!(service = %self.service, attempt, error = %kind, "retrying");
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
                Err(kind) => return Err(GatewayError::new(self.service, kind)),
            }
        }
    }

    fn decode_err(&self, msg: impl Into<String>) -> GatewayError {
        GatewayError::decode(self.service, msg)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: HttpClient,
    model: String,
}

impl HttpEmbedder {
    pub fn new(client: HttpClient, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let resp = self
            .client
            .post_json("/embeddings", &json!({"model": self.model, "input": texts}))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| self.client.decode_err("missing data array"))?;
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; data.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> =
                serde_json::from_value(item.get("embedding").cloned().unwrap_or(Value::Null))
                    .map_err(|e| self.client.decode_err(format!("embedding {pos}: {e}")))?;
            let v = EmbeddingVector::new(values)
                .map_err(|e| self.client.decode_err(format!("embedding {pos}: {e}")))?;
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| self.client.decode_err(format!("index {idx} out of range")))?;
            if slot.replace(v).is_some() {
                return Err(self.client.decode_err(format!("duplicate index {idx}")));
            }
        }
        out.into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.client.decode_err("missing embedding index"))
    }
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    client: HttpClient,
    model: String,
}

impl HttpGenerator {
    pub fn new(client: HttpClient, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
        }
    }
}

impl Generator for HttpGenerator {
    fn complete(&self, prompt: &str, system: &str) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
        });
        let resp = self.client.post_json("/chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| self.client.decode_err("missing choices[0].message.content"))
    }
}

#[derive(Debug, Clone)]
pub struct HttpReranker {
    client: HttpClient,
    model: String,
    shape: RerankShape,
}

impl HttpReranker {
    pub fn new(client: HttpClient, model: impl Into<String>, shape: RerankShape) -> Self {
        Self {
            client,
            model: model.into(),
            shape,
        }
    }
}

impl Reranker for HttpReranker {
    fn rerank_scores(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, GatewayError> {
        let s = &self.shape;
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert(s.query_field.clone(), json!(query));
        body.insert(s.documents_field.clone(), json!(passages));
        let resp = self.client.post_json(&s.path, &Value::Object(body))?;
        let results = resp
            .get(&s.results_field)
            .and_then(Value::as_array)
            .ok_or_else(|| {
                self.client
                    .decode_err(format!("missing {} array", s.results_field))
            })?;
        let mut scores = vec![None; passages.len()];
        for (pos, r) in results.iter().enumerate() {
            let (idx, score) = match r.as_f64() {
                Some(x) => (pos, x),
                None => (
                    r.get(&s.index_field)
                        .and_then(Value::as_u64)
                        .ok_or_else(|| {
                            self.client
                                .decode_err(format!("result {pos} lacks {}", s.index_field))
                        })? as usize,
                    r.get(&s.score_field)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| {
                            self.client
                                .decode_err(format!("result {pos} lacks {}", s.score_field))
                        })?,
                ),
            };
            let slot = scores
                .get_mut(idx)
                .ok_or_else(|| self.client.decode_err(format!("index {idx} out of range")))?;
            *slot = Some(score);
        }
        scores
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.client.decode_err("scores missing for some passages"))
    }
}

#[derive(Debug, Clone)]
pub struct HttpWebSearch {
    client: HttpClient,
}

impl HttpWebSearch {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl WebSearch for HttpWebSearch {
    fn web_search(&self, query: &str, top_k: usize) -> Result<Vec<WebResult>, GatewayError> {
        let resp = self
            .client
            .post_json("/search", &json!({"query": query, "max_results": top_k}))?;
        let results = resp
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| self.client.decode_err("missing results array"))?;
        results
            .iter()
            .map(|r| {
                let field = |k: &str| r.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
                let url = field("url");
                if url.is_empty() {
                    return Err(self.client.decode_err("result without url"));
                }
                Ok(WebResult {
                    title: field("title"),
                    url,
                    snippet: field("content"),
                    score: r.get("score").and_then(Value::as_f64).unwrap_or(0.0),
                })
            })
            .collect()
    }
}

impl Gateway {
    /// Remote backends for all four services, keys taken from the environment.
    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let client = |svc: Service, c: &ServiceConfig| HttpClient::new(svc, c);
        Ok(Gateway::new(
            Arc::new(HttpEmbedder::new(
                client(Service::Embedder, &cfg.embedder)?,
                &cfg.embedder.model,
            )),
            Arc::new(HttpGenerator::new(
                client(Service::Llm, &cfg.llm)?,
                &cfg.llm.model,
            )),
            Arc::new(HttpReranker::new(
                client(Service::Reranker, &cfg.reranker)?,
                &cfg.reranker.model,
                cfg.rerank_shape.clone(),
            )),
            Arc::new(HttpWebSearch::new(client(
                Service::WebSearch,
                &cfg.websearch,
            )?)),
        ))
    }
}
