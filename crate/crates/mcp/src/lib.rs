//! JSON-RPC 2.0 tool server exposing `rag_chat` and `rag_search`.
//!
//! [`McpServer::handle_request`] is transport independent: it maps one
//! request text to at most one response text. Notifications (requests
//! without an `id`) never produce a response.

pub mod transport;

use std::sync::Arc;

use ragway_core::pipeline::{ChatResult, Pipeline, PipelineError, RequestOptions};
use ragway_core::types::ScoredChunk;
use serde_json::{json, Map, Value};

pub use transport::{bind_http, serve_http, serve_stdio, shutdown_signal, ServeError};

pub const DEFAULT_PROTOCOL_VERSION: &str = "2025-06-18";
pub const SERVER_NAME: &str = "ragway";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

/// An error response in the making.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    pub data: Option<Value>,
}

impl RpcError {
    fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    fn invalid_params(message: impl Into<String>) -> Self {
        Self::new(INVALID_PARAMS, message)
    }
}

impl From<PipelineError> for RpcError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidRequest(m) => RpcError::invalid_params(m),
            other => RpcError {
                code: INTERNAL_ERROR,
                message: "pipeline failure".into(),
                data: Some(json!({"stage": other.stage(), "detail": other.to_string()})),
            },
        }
    }
}

fn tool_descriptors() -> Value {
    json!([
        {
            "name": "rag_chat",
            "description": "Answer a question from the indexed documentation, with cited sources. \
                            Uses the semantic cache, adaptive routing and corrective retrieval.",
            "inputSchema": {
                "type": "object",
                "properties": {
                    "query": {"type": "string", "minLength": 1, "description": "The question."},
                    "no_cache": {"type": "boolean", "description": "Bypass the semantic cache for this request."},
                    "partition": {"type": "string", "description": "Partition key to search; defaults to the configured one."}
                },
                "required": ["query"],
                "additionalProperties": false
            }
        },
        {
            "name": "rag_search",
            "description": "Return the most relevant documentation chunks for a query, reranked. No generation.",
            "inputSchema": {
                "type": "object",
                "properties": {
                    "query": {"type": "string", "minLength": 1, "description": "Search text."},
                    "top_k": {"type": "integer", "minimum": 1, "description": "Number of chunks to return."},
                    "partition": {"type": "string", "description": "Partition key to search; defaults to the configured one."}
                },
                "required": ["query"],
                "additionalProperties": false
            }
        }
    ])
}

#[derive(Debug, Clone)]
pub struct McpServer {
    pipeline: Arc<Pipeline>,
    protocol_version: String,
    tools: Value,
}

impl McpServer {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        Self {
            pipeline,
            protocol_version: DEFAULT_PROTOCOL_VERSION.into(),
            tools: tool_descriptors(),
        }
    }

    pub fn with_protocol_version(mut self, version: impl Into<String>) -> Self {
        self.protocol_version = version.into();
        self
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    /// Handle one JSON-RPC message. Returns `None` for notifications.
    pub fn handle_request(&self, raw: &str) -> Option<String> {
        let response = match serde_json::from_str::<Value>(raw) {
            Err(e) => Some(error_response(
                Value::Null,
                RpcError::new(PARSE_ERROR, format!("parse error: {e}")),
            )),
            Ok(msg) => self.handle_value(msg),
        };
        response.map(|v| v.to_string())
    }

    fn handle_value(&self, msg: Value) -> Option<Value> {
        let Value::Object(obj) = msg else {
            return Some(error_response(
                Value::Null,
                RpcError::new(INVALID_REQUEST, "request must be an object"),
            ));
        };
        let id = match obj.get("id") {
            None => None,
            Some(v @ (Value::Null | Value::Number(_) | Value::String(_))) => Some(v.clone()),
            Some(_) => {
                return Some(error_response(
                    Value::Null,
                    RpcError::new(INVALID_REQUEST, "id must be a number, string or null"),
                ));
            }
        };
        let result = self.dispatch(&obj);
        let id = id?;
        Some(match result {
            Ok(v) => json!({"jsonrpc": "2.0", "id": id, "result": v}),
            Err(e) => error_response(id, e),
        })
    }

    fn dispatch(&self, obj: &Map<String, Value>) -> Result<Value, RpcError> {
        if obj.get("jsonrpc").and_then(Value::as_str) != Some("2.0") {
            return Err(RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\""));
        }
        let method = obj
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| RpcError::new(INVALID_REQUEST, "method must be a string"))?;
        let empty = Map::new();
        let params = match obj.get("params") {
            None | Some(Value::Null) => &empty,
            Some(Value::Object(p)) => p,
            Some(_) => return Err(RpcError::invalid_params("params must be an object")),
        };
        match method {
            "initialize" => Ok(json!({
                "protocolVersion": self.protocol_version,
                "capabilities": {"tools": {"listChanged": false}},
                "serverInfo": {"name": SERVER_NAME, "version": env!("CARGO_PKG_VERSION")},
            })),
            "ping" => Ok(json!({})),
            "tools/list" => Ok(json!({"tools": self.tools})),
            "tools/call" => self.call_tool(params),
            m if m.starts_with("notifications/") => Ok(Value::Null),
            m => Err(RpcError::new(
                METHOD_NOT_FOUND,
                format!("method not found: {m}"),
            )),
        }
    }

    fn call_tool(&self, params: &Map<String, Value>) -> Result<Value, RpcError> {
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| RpcError::invalid_params("tools/call requires a string name"))?;
        let empty = Map::new();
        let args = match params.get("arguments") {
            None | Some(Value::Null) => &empty,
            Some(Value::Object(a)) => a,
            Some(_) => return Err(RpcError::invalid_params("arguments must be an object")),
        };
        let query = args
            .get("query")
            .and_then(Value::as_str)
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| {
                RpcError::invalid_params("argument query (non-empty string) is required")
            })?;
        let partition = opt_string(args, "partition")?;
        match name {
            "rag_chat" => {
                check_keys(args, &["query", "no_cache", "partition"])?;
                let no_cache = match args.get("no_cache") {
                    None | Some(Value::Null) => None,
                    Some(Value::Bool(b)) => Some(*b),
                    Some(_) => return Err(RpcError::invalid_params("no_cache must be a boolean")),
                };
                let opts = RequestOptions {
                    partition,
                    use_cache: no_cache.map(|n| !n),
                    top_k: None,
                };
                let r = self.pipeline.chat(query, &opts)?;
                Ok(tool_result(
                    render_chat(&r),
                    serde_json::to_value(&r).expect("serializable"),
                ))
            }
            "rag_search" => {
                check_keys(args, &["query", "top_k", "partition"])?;
                let top_k =
                    match args.get("top_k") {
                        None | Some(Value::Null) => None,
                        Some(v) => Some(v.as_u64().filter(|k| *k >= 1).ok_or_else(|| {
                            RpcError::invalid_params("top_k must be an integer >= 1")
                        })? as usize),
                    };
                let opts = RequestOptions {
                    partition,
                    use_cache: None,
                    top_k,
                };
                let hits = self.pipeline.search(query, &opts)?;
                Ok(tool_result(render_search(&hits), json!({"results": hits})))
            }
            other => Err(RpcError::invalid_params(format!("unknown tool: {other}"))),
        }
    }
}

fn opt_string(args: &Map<String, Value>, key: &str) -> Result<Option<String>, RpcError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if !s.is_empty() => Ok(Some(s.clone())),
        Some(_) => Err(RpcError::invalid_params(format!(
            "{key} must be a non-empty string"
        ))),
    }
}

fn check_keys(args: &Map<String, Value>, allowed: &[&str]) -> Result<(), RpcError> {
    match args.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(RpcError::invalid_params(format!("unexpected argument {k}"))),
        None => Ok(()),
    }
}

fn tool_result(text: String, structured: Value) -> Value {
    json!({
        "content": [{"type": "text", "text": text}],
        "structuredContent": structured,
        "isError": false,
    })
}

pub fn render_chat(r: &ChatResult) -> String {
    let mut out = r.answer.clone();
    if !r.sources.is_empty() {
        out.push_str("\n\nSources:");
        for s in &r.sources {
            out.push_str(&format!("\n- {} ({:.4})", s.id, s.score));
        }
    }
    out
}

pub fn render_search(hits: &[ScoredChunk]) -> String {
    let mut out = String::new();
    for (i, h) in hits.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "[{}] {} (score {:.4})\n{}",
            i + 1,
            h.chunk.id,
            h.score,
            h.chunk.content
        ));
    }
    out
}

fn error_response(id: Value, e: RpcError) -> Value {
    let mut err = json!({"code": e.code, "message": e.message});
    if let Some(data) = e.data {
        err["data"] = data;
    }
    json!({"jsonrpc": "2.0", "id": id, "error": err})
}
