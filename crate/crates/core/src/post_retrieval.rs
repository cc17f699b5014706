//! Reranking, corrective relevance evaluation, and context compression.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, Service, WebResult};
use crate::prompts::PromptCatalog;
use crate::splitter::detect_code_blocks;
use crate::text::{content_tokens, tokenize};
use crate::types::{sort_scored, Chunk, CragVerdict, ScoredChunk, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CragConfig {
    pub upper_threshold: f64,
    pub lower_threshold: f64,
    pub evaluator_prompt_key: String,
    /// Web results requested on the Incorrect and Ambiguous branches.
    pub web_top_k: usize,
}

impl Default for CragConfig {
    fn default() -> Self {
        Self {
            upper_threshold: 0.7,
            lower_threshold: 0.3,
            evaluator_prompt_key: "evaluate".into(),
            web_top_k: 3,
        }
    }
}

impl CragConfig {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = (self.lower_threshold, self.upper_threshold);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(format!(
                "crag thresholds must satisfy 0 <= lower < upper <= 1 (got {lo}, {hi})"
            ));
        }
        if self.web_top_k == 0 {
            return Err("crag web_top_k must be at least 1".into());
        }
        if self.evaluator_prompt_key.is_empty() {
            return Err("crag evaluator_prompt_key must be set".into());
        }
        Ok(())
    }
}

/// A chunk that survived evaluation, with its evaluator score and the
/// compressed text that goes into the generation prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedChunk {
    pub scored: ScoredChunk,
    pub relevance: f64,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CragOutcome {
    pub verdict: CragVerdict,
    pub per_chunk_scores: Vec<f64>,
    pub retained: Vec<RetainedChunk>,
    pub web_results: Vec<WebResult>,
    /// Set when the Ambiguous branch could not reach web search.
    pub degraded: bool,
}

/// Verdict and retained positions for a vector of per-chunk scores.
///
/// The aggregate is the maximum score; an empty vector is Incorrect.
pub fn decide(scores: &[f64], cfg: &CragConfig) -> (CragVerdict, Vec<usize>) {
    let Some(aggregate) = scores.iter().copied().reduce(f64::max) else {
        return (CragVerdict::Incorrect, Vec::new());
    };
    let verdict = if aggregate >= cfg.upper_threshold {
        CragVerdict::Correct
    } else if aggregate <= cfg.lower_threshold {
        CragVerdict::Incorrect
    } else {
        CragVerdict::Ambiguous
    };
    let retained = if verdict == CragVerdict::Incorrect {
        Vec::new()
    } else {
        (0..scores.len())
            .filter(|&i| scores[i] >= cfg.lower_threshold)
            .collect()
    };
    (verdict, retained)
}

/// First real number in an evaluator reply, clamped to [0, 1]; 0.0 if none.
pub fn parse_score(reply: &str) -> f64 {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re =
        NUMBER.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());
    re.find(reply)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|x| x.is_finite())
        .map_or(0.0, |x| x.clamp(0.0, 1.0))
}

/// Replace candidate scores with cross-encoder scores and keep the best `top_n`.
pub fn rerank(
    gateway: &Gateway,
    query: &str,
    candidates: Vec<ScoredChunk>,
    top_n: usize,
) -> Result<Vec<ScoredChunk>, GatewayError> {
    if top_n == 0 {
        return Err(GatewayError::precondition(
            Service::Reranker,
            "top_n must be at least 1",
        ));
    }
    let passages: Vec<String> = candidates.iter().map(|c| c.chunk.content.clone()).collect();
    let scores = gateway.rerank_scores(query, &passages)?;
    let mut out: Vec<ScoredChunk> = candidates
        .into_iter()
        .zip(scores)
        .map(|(c, s)| ScoredChunk::new(c.chunk, s, Stage::Reranked))
        .collect();
    sort_scored(&mut out);
    out.truncate(top_n);
    Ok(out)
}

/// Score each chunk with the evaluator prompt and take the corrective branch.
pub fn crag_evaluate(
    gateway: &Gateway,
    prompts: &PromptCatalog,
    query: &str,
    chunks: Vec<ScoredChunk>,
    cfg: &CragConfig,
) -> Result<CragOutcome, GatewayError> {
    let scores: Vec<f64> = chunks
        .par_iter()
        .map(|c| {
            let (system, user) = prompts.render(
                &cfg.evaluator_prompt_key,
                &[("query", query), ("passage", &c.chunk.content)],
            );
            gateway.complete(&user, &system).map(|r| parse_score(&r))
        })
        .collect::<Result<_, _>>()?;
    let (verdict, keep) = decide(&scores, cfg);
    let keep: BTreeSet<usize> = keep.into_iter().collect();
    let retained: Vec<RetainedChunk> = chunks
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(i, scored)| RetainedChunk {
            context: compress(query, &scored.chunk),
            relevance: scores[i],
            scored,
        })
        .collect();

    let mut outcome = CragOutcome {
        verdict,
        per_chunk_scores: scores,
        retained,
        web_results: Vec::new(),
        degraded: false,
    };
    match verdict {
        CragVerdict::Correct => {}
        CragVerdict::Incorrect => outcome.web_results = gateway.web_search(query, cfg.web_top_k)?,
        CragVerdict::Ambiguous => match gateway.web_search(query, cfg.web_top_k) {
            Ok(r) => outcome.web_results = r,
            Err(e) => {
                tracing::warn!(error = %e, "web search failed on ambiguous retrieval; using internal context only");
                outcome.degraded = true;
            }
        },
    }
    Ok(outcome)
}

fn push_sentences<'a>(piece: &'a str, out: &mut Vec<(&'a str, bool)>) {
    let mut start = 0;
    let mut chars = piece.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            out.push((&piece[start..=i], false));
            start = i + 1;
        }
    }
    out.push((&piece[start..], false));
}

/// Compression units in document order: sentences, and whole fenced code
/// blocks flagged `true`. Units are trimmed and never empty.
pub fn segments(text: &str) -> Vec<(&str, bool)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for b in detect_code_blocks(text) {
        push_sentences(&text[pos..b.start], &mut out);
        out.push((&text[b.start..b.end], true));
        pos = b.end;
    }
    push_sentences(&text[pos..], &mut out);
    out.into_iter()
        .map(|(s, code)| (if code { s.trim_end() } else { s.trim() }, code))
        .filter(|(s, _)| !s.trim().is_empty())
        .collect()
}

/// Keep the sentences sharing a content token with the query, in order.
/// Falls back to the full content when nothing qualifies.
pub fn compress(query: &str, chunk: &Chunk) -> String {
    let wanted: BTreeSet<String> = content_tokens(query).into_iter().collect();
    let kept: Vec<(&str, bool)> = segments(&chunk.content)
        .into_iter()
        .filter(|(s, _)| tokenize(s).iter().any(|t| wanted.contains(t)))
        .collect();
    if kept.is_empty() {
        return chunk.content.clone();
    }
    let mut out = String::new();
    let mut prev_code = false;
    for (i, (s, code)) in kept.iter().enumerate() {
        if i > 0 {
            out.push_str(if *code || prev_code { "\n" } else { " " });
        }
        out.push_str(s);
        prev_code = *code;
    }
    out
}
