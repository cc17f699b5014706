//! Deterministic offline backends.
//!
//! The embedder hashes token counts into a fixed number of buckets; the
//! generator is a rule table keyed by the system prompt's directive; the
//! reranker scores token overlap; web search returns canned fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{Embedder, Gateway, GatewayError, Generator, Reranker, WebResult, WebSearch};
use crate::prompts::{self, REFUSAL};
use crate::text::{content_tokens, token_f1, tokenize};
use crate::types::EmbeddingVector;

pub const DEFAULT_MOCK_DIM: usize = 256;

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    /// # Panics
    /// If `dim` is zero.
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn bucket(&self, feature: &str) -> (usize, f64) {
        let h = Sha256::digest(feature.as_bytes());
        let mut idx = [0u8; 8];
        idx.copy_from_slice(&h[..8]);
        let bucket = (u64::from_le_bytes(idx) % self.dim as u64) as usize;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
        let mut v = vec![0.0f64; self.dim];
        for (tok, n) in &counts {
            let (b, s) = self.bucket(tok);
            v[b] += s * f64::from(*n);
        }
        if v.iter().all(|x| *x == 0.0) {
            // No tokens, or colliding signs cancelled out.
            let (b, _) = self.bucket(text);
            v[b] = 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        EmbeddingVector::new(v).expect("finite non-empty")
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

const EXTERNAL_MARKERS: &[&str] = &[
    "current",
    "currently",
    "latest",
    "news",
    "recent",
    "recently",
    "today",
    "tomorrow",
    "tonight",
    "weather",
    "yesterday",
];

const COMPLEX_MARKERS: &[&str] = &[
    "compare",
    "comparison",
    "cons",
    "difference",
    "differences",
    "explain",
    "pros",
    "tradeoff",
    "tradeoffs",
    "versus",
    "vs",
    "why",
];

const DECOMPOSE_TRIGGERS: &[&str] = &["between", "compare", "difference", "differences"];
const CONJUNCTIONS: &[&str] = &["and", "or", "versus", "vs"];

/// Scripted generator. Behavior per directive:
///
/// * `route`: external markers win, then complex markers, else `simple`.
/// * `rewrite`: the question's content tokens.
/// * `decompose`: `compare X and Y` style questions become `features of X`
///   and `features of Y`; anything else yields nothing.
/// * `hyde`: a templated passage repeating the content tokens.
/// * `evaluate`: `0.9` when the passage shares two or more question content
///   tokens (or all of them), `0.5` for one, `0.1` for none.
/// * `answer`: the context block with the highest token F1 against the
///   question, or the refusal sentence when there is no context.
/// * `judge`: fraction of answer content tokens present in the context.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    overrides: BTreeMap<String, String>,
    latency: Option<Duration>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Always reply `response` to prompts with this directive.
    pub fn with_response(mut self, directive: &str, response: impl Into<String>) -> Self {
        self.overrides.insert(directive.to_owned(), response.into());
        self
    }

    /// Sleep this long on every call, to model a slow remote model.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    fn respond(directive: &str, prompt: &str) -> String {
        let sections = prompts::sections(prompt);
        let body = |name: &str| {
            sections
                .iter()
                .find(|s| s.name == name)
                .map_or("", |s| s.body)
        };
        match directive {
            "route" => route_rule(body("question")).to_owned(),
            "rewrite" => content_tokens(body("question")).join(" "),
            "decompose" => decompose_rule(body("question")).join("\n"),
            "hyde" => hyde_rule(body("question")),
            "evaluate" => evaluate_rule(body("question"), body("passage")).to_owned(),
            "answer" => {
                let question = tokenize(body("question"));
                let mut best: Option<(&str, f64)> = None;
                for s in sections
                    .iter()
                    .filter(|s| s.name == "context" || s.name == "web")
                {
                    let f1 = token_f1(&tokenize(s.body), &question);
                    if best.is_none_or(|(_, b)| f1 > b) {
                        best = Some((s.body, f1));
                    }
                }
                best.map_or_else(|| REFUSAL.to_owned(), |(b, _)| b.to_owned())
            }
            "judge" => {
                let answer: BTreeSet<String> = content_tokens(body("answer")).into_iter().collect();
                let context: BTreeSet<String> = sections
                    .iter()
                    .filter(|s| s.name == "context" || s.name == "web")
                    .flat_map(|s| tokenize(s.body))
                    .collect();
                if answer.is_empty() {
                    "1.0".to_owned()
                } else {
                    let hit = answer.iter().filter(|t| context.contains(*t)).count();
                    format!("{:.3}", hit as f64 / answer.len() as f64)
                }
            }
            _ => String::new(),
        }
    }
}

fn route_rule(question: &str) -> &'static str {
    let toks = tokenize(question);
    if toks.iter().any(|t| EXTERNAL_MARKERS.contains(&t.as_str())) {
        "external"
    } else if toks.iter().any(|t| COMPLEX_MARKERS.contains(&t.as_str())) {
        "complex"
    } else {
        "simple"
    }
}

fn decompose_rule(question: &str) -> Vec<String> {
    let words: Vec<&str> = question
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let is = |i: usize, set: &[&str]| set.contains(&lower[i].as_str());
    let Some(first_conj) = (0..words.len()).find(|&i| is(i, CONJUNCTIONS)) else {
        return Vec::new();
    };
    let start = (0..first_conj)
        .rev()
        .find(|&i| is(i, DECOMPOSE_TRIGGERS))
        .map_or(0, |i| i + 1);
    let mut groups: Vec<Vec<&str>> = vec![Vec::new()];
    for (word, low) in words.iter().zip(&lower).skip(start) {
        if CONJUNCTIONS.contains(&low.as_str()) {
            groups.push(Vec::new());
        } else {
            groups.last_mut().expect("non-empty").push(word);
        }
    }
    groups.retain(|g| !g.is_empty());
    if groups.len() < 2 {
        return Vec::new();
    }
    groups
        .iter()
        .map(|g| format!("features of {}", g.join(" ")))
        .collect()
}

fn hyde_rule(question: &str) -> String {
    let words = content_tokens(question);
    if words.is_empty() {
        return String::new();
    }
    let c = words.join(" ");
    format!(
        "{c}: overview. This section describes {c} in detail, covering how {c} is configured and used."
    )
}

fn evaluate_rule(question: &str, passage: &str) -> &'static str {
    let q: BTreeSet<String> = content_tokens(question).into_iter().collect();
    let p: BTreeSet<String> = tokenize(passage).into_iter().collect();
    let overlap = q.intersection(&p).count();
    if overlap >= 2 || (overlap >= 1 && overlap == q.len()) {
        "0.9"
    } else if overlap == 1 {
        "0.5"
    } else {
        "0.1"
    }
}

impl Generator for MockGenerator {
    fn complete(&self, prompt: &str, system: &str) -> Result<String, GatewayError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let directive = prompts::directive(system).unwrap_or("");
        Ok(match self.overrides.get(directive) {
            Some(r) => r.clone(),
            None => Self::respond(directive, prompt),
        })
    }
}

/// Scores a passage by token F1 against the query.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockReranker;

impl Reranker for MockReranker {
    fn rerank_scores(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, GatewayError> {
        let q = tokenize(query);
        Ok(passages
            .iter()
            .map(|p| token_f1(&tokenize(p), &q))
            .collect())
    }
}

/// A canned web result set returned when every keyword appears in the query.
#[derive(Debug, Clone, PartialEq)]
pub struct WebFixture {
    pub keywords: Vec<String>,
    pub results: Vec<WebResult>,
}

impl WebFixture {
    pub fn new(keywords: &str, results: Vec<WebResult>) -> Self {
        Self {
            keywords: tokenize(keywords),
            results,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockWebSearch {
    fixtures: Vec<WebFixture>,
}

impl MockWebSearch {
    pub fn new(fixtures: Vec<WebFixture>) -> Self {
        Self { fixtures }
    }

    /// A single fixture answering questions about the latest release.
    pub fn with_default_fixtures() -> Self {
        Self::new(vec![WebFixture::new(
            "latest release",
            vec![WebResult {
                title: "Release notes".into(),
                url: "https://example.com/releases/latest".into(),
                snippet: "The latest release is version 2.4, published last week.".into(),
                score: 0.9,
            }],
        )])
    }
}

impl WebSearch for MockWebSearch {
    fn web_search(&self, query: &str, top_k: usize) -> Result<Vec<WebResult>, GatewayError> {
        let q: BTreeSet<String> = tokenize(query).into_iter().collect();
        Ok(self
            .fixtures
            .iter()
            .find(|f| !f.keywords.is_empty() && f.keywords.iter().all(|k| q.contains(k)))
            .map(|f| f.results.iter().take(top_k).cloned().collect())
            .unwrap_or_default())
    }
}

/// Builder for a fully offline gateway.
#[derive(Debug, Clone)]
pub struct MockStack {
    pub dim: usize,
    pub generator: MockGenerator,
    pub web: MockWebSearch,
}

impl Default for MockStack {
    fn default() -> Self {
        Self {
            dim: DEFAULT_MOCK_DIM,
            generator: MockGenerator::default(),
            web: MockWebSearch::with_default_fixtures(),
        }
    }
}

impl MockStack {
    pub fn gateway(&self) -> Gateway {
        Gateway::new(
            Arc::new(MockEmbedder::new(self.dim)),
            Arc::new(self.generator.clone()),
            Arc::new(MockReranker),
            Arc::new(self.web.clone()),
        )
    }
}
