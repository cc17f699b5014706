//! Chat and search workflows over the index, cache and model gateway.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, CacheEntry, SemanticCache, Source, SourceKind};
use crate::clock::{Clock, SystemClock};
use crate::gateway::{Gateway, GatewayError, WebResult};
use crate::post_retrieval::{crag_evaluate, rerank, CragConfig, CragOutcome};
use crate::pre_retrieval::{QueryTransformer, DEFAULT_MAX_SUBS};
use crate::prompts::{context_block, PromptCatalog};
use crate::retrieval::{apply_boost, ids_of, BoostRule, HybridIndex, RetrievalError, RrfConfig};
use crate::types::{CragVerdict, EmbeddingVector, RouteDecision, ScoredChunk};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub top_k_retrieve: usize,
    pub top_n_rerank: usize,
    pub max_hops: u32,
    pub use_cache: bool,
    pub partition_key: String,
    pub max_sub_queries: usize,
    pub boost_rules: Vec<BoostRule>,
    pub rrf: RrfConfig,
    pub crag: CragConfig,
    pub cache: CacheConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k_retrieve: 20,
            top_n_rerank: 5,
            max_hops: 2,
            use_cache: true,
            partition_key: "default".into(),
            max_sub_queries: DEFAULT_MAX_SUBS,
            boost_rules: Vec::new(),
            rrf: RrfConfig::default(),
            crag: CragConfig::default(),
            cache: CacheConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.top_n_rerank == 0 || self.top_n_rerank > self.top_k_retrieve {
            return Err(format!(
                "need 1 <= top_n_rerank ({}) <= top_k_retrieve ({})",
                self.top_n_rerank, self.top_k_retrieve
            ));
        }
        if self.max_hops == 0 {
            return Err("max_hops must be at least 1".into());
        }
        if self.partition_key.is_empty() {
            return Err("partition_key must be non-empty".into());
        }
        if self.max_sub_queries == 0 {
            return Err("max_sub_queries must be at least 1".into());
        }
        if self.rrf.k == 0 {
            return Err("rrf k must be positive".into());
        }
        if let Some(r) = self.boost_rules.iter().find(|r| !r.is_valid()) {
            return Err(format!(
                "boost factor for {}={} must be positive",
                r.metadata_key, r.metadata_value
            ));
        }
        self.crag.validate()?;
        self.cache.validate()
    }
}

/// Per-request overrides of the configured defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestOptions {
    pub partition: Option<String>,
    pub use_cache: Option<bool>,
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResult {
    pub answer: String,
    pub sources: Vec<Source>,
    pub route: RouteDecision,
    pub cache_hit: bool,
    pub hops_used: u32,
    pub verdict: Option<CragVerdict>,
    /// Milliseconds per stage, summed over hops, plus `total`.
    pub timings: BTreeMap<String, f64>,
    /// Context texts the answer was generated from.
    pub contexts: Vec<String>,
    /// Web search was needed but failed; the answer uses internal context only.
    pub degraded: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{stage} stage failed: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("{stage} stage failed: {source}")]
    Retrieval {
        stage: &'static str,
        #[source]
        source: RetrievalError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::InvalidRequest(_) => None,
            PipelineError::Gateway { stage, .. } | PipelineError::Retrieval { stage, .. } => {
                Some(stage)
            }
        }
    }
}

fn at<E>(stage: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: Into<StageSource>,
{
    move |e| match e.into() {
        StageSource::Gateway(source) => PipelineError::Gateway { stage, source },
        StageSource::Retrieval(source) => PipelineError::Retrieval { stage, source },
    }
}

enum StageSource {
    Gateway(GatewayError),
    Retrieval(RetrievalError),
}

impl From<GatewayError> for StageSource {
    fn from(e: GatewayError) -> Self {
        StageSource::Gateway(e)
    }
}

impl From<RetrievalError> for StageSource {
    fn from(e: RetrievalError) -> Self {
        StageSource::Retrieval(e)
    }
}

#[derive(Debug, Default)]
pub struct PipelineStats {
    index_searches: AtomicU64,
    chats: AtomicU64,
    searches: AtomicU64,
}

impl PipelineStats {
    /// Hybrid index queries issued so far (each sub-query counts).
    pub fn index_searches(&self) -> u64 {
        self.index_searches.load(Ordering::Relaxed)
    }

    pub fn chats(&self) -> u64 {
        self.chats.load(Ordering::Relaxed)
    }

    pub fn searches(&self) -> u64 {
        self.searches.load(Ordering::Relaxed)
    }
}

#[derive(Default)]
struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.to_owned()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    gateway: Gateway,
    prompts: PromptCatalog,
    index: RwLock<HybridIndex>,
    cache: SemanticCache,
    clock: Arc<dyn Clock>,
    stats: PipelineStats,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("cfg", &self.cfg)
            .field("chunks", &self.index.read().len())
            .field("cache_entries", &self.cache.len())
            .finish()
    }
}

impl Pipeline {
    /// # Errors
    /// Returns the first violated configuration invariant.
    pub fn new(
        cfg: PipelineConfig,
        gateway: Gateway,
        prompts: PromptCatalog,
        index: HybridIndex,
    ) -> Result<Self, String> {
        cfg.validate()?;
        if !prompts.prompts.contains_key(&cfg.crag.evaluator_prompt_key) {
            return Err(format!(
                "prompt catalog has no {:?} entry",
                cfg.crag.evaluator_prompt_key
            ));
        }
        Ok(Self {
            cache: SemanticCache::new(cfg.cache.clone()),
            cfg,
            gateway,
            prompts,
            index: RwLock::new(index),
            clock: Arc::new(SystemClock),
            stats: PipelineStats::default(),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn prompts(&self) -> &PromptCatalog {
        &self.prompts
    }

    pub fn cache(&self) -> &SemanticCache {
        &self.cache
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn index(&self) -> RwLockReadGuard<'_, HybridIndex> {
        self.index.read()
    }

    pub fn index_mut(&self) -> RwLockWriteGuard<'_, HybridIndex> {
        self.index.write()
    }

    fn transformer(&self) -> QueryTransformer<'_> {
        QueryTransformer::new(&self.gateway, &self.prompts).with_max_subs(self.cfg.max_sub_queries)
    }

    fn check_query(query: &str) -> Result<(), PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::InvalidRequest(
                "query must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn hybrid(
        &self,
        index: &HybridIndex,
        text: &str,
        vec: &EmbeddingVector,
        partition: &str,
    ) -> Result<Vec<ScoredChunk>, PipelineError> {
        self.stats.index_searches.fetch_add(1, Ordering::Relaxed);
        index
            .hybrid_search(
                text,
                vec,
                partition,
                self.cfg.top_k_retrieve,
                self.cfg.rrf,
                &self.cfg.boost_rules,
            )
            .map_err(at("retrieve"))
    }

    /// Stateless retrieval: hybrid search then rerank. No cache, no generation.
    pub fn search(
        &self,
        query: &str,
        opts: &RequestOptions,
    ) -> Result<Vec<ScoredChunk>, PipelineError> {
        Self::check_query(query)?;
        self.stats.searches.fetch_add(1, Ordering::Relaxed);
        let top_n = opts.top_k.unwrap_or(self.cfg.top_n_rerank);
        if top_n == 0 {
            return Err(PipelineError::InvalidRequest(
                "top_k must be at least 1".into(),
            ));
        }
        let partition = opts.partition.as_deref().unwrap_or(&self.cfg.partition_key);
        let index = self.index.read();
        if index.partition_len(partition) == 0 {
            return Ok(Vec::new());
        }
        let vec = self.gateway.embed_one(query).map_err(at("embed"))?;
        let candidates = self.hybrid(&index, query, &vec, partition)?;
        drop(index);
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        rerank(&self.gateway, query, candidates, top_n).map_err(at("rerank"))
    }

    /// One retrieval round for the Simple or Complex route.
    fn retrieve(
        &self,
        timer: &mut Timer,
        query: &str,
        route: RouteDecision,
        query_vec: Option<&EmbeddingVector>,
        partition: &str,
    ) -> Result<(Vec<ScoredChunk>, String), PipelineError> {
        if route == RouteDecision::Simple {
            let vec = match query_vec {
                Some(v) => v.clone(),
                None => timer
                    .time("embed", || self.gateway.embed_one(query))
                    .map_err(at("embed"))?,
            };
            let index = self.index.read();
            let hits = timer.time("retrieve", || self.hybrid(&index, query, &vec, partition))?;
            return Ok((hits, query.to_owned()));
        }

        let tq = timer
            .time("transform", || {
                self.transformer().transform(query, RouteDecision::Complex)
            })
            .map_err(at("transform"))?;
        let mut texts = vec![tq
            .hyde_document
            .clone()
            .unwrap_or_else(|| tq.rewritten.clone())];
        texts.extend(tq.sub_queries.iter().cloned());
        let vecs = timer
            .time("embed", || self.gateway.embed(&texts))
            .map_err(at("embed"))?;

        let index = self.index.read();
        timer.time("retrieve", || {
            let main = self.hybrid(&index, &tq.rewritten, &vecs[0], partition)?;
            if tq.sub_queries.is_empty() {
                return Ok((main, tq.rewritten.clone()));
            }
            let mut lists = vec![ids_of(&main)];
            for (sub, v) in tq.sub_queries.iter().zip(&vecs[1..]) {
                lists.push(ids_of(&self.hybrid(&index, sub, v, partition)?));
            }
            let mut fused = apply_boost(
                index.fused_chunks(&lists, self.cfg.rrf),
                &self.cfg.boost_rules,
            );
            fused.truncate(self.cfg.top_k_retrieve);
            Ok((fused, tq.rewritten.clone()))
        })
    }

    fn generate(
        &self,
        timer: &mut Timer,
        query: &str,
        contexts: &[(String, String)],
        web: &[WebResult],
    ) -> Result<(String, Vec<String>), PipelineError> {
        let mut block = String::new();
        let mut texts = Vec::new();
        for (i, (id, text)) in contexts.iter().enumerate() {
            block.push_str(&context_block("context", i + 1, id, text));
            texts.push(text.clone());
        }
        for (i, w) in web.iter().enumerate() {
            let text = format!("{}\n{}", w.title, w.snippet);
            block.push_str(&context_block("web", i + 1, &w.url, &text));
            texts.push(text);
        }
        let (system, user) = self
            .prompts
            .render("answer", &[("context", &block), ("query", query)]);
        let answer = timer
            .time("generate", || self.gateway.complete(&user, &system))
            .map_err(at("generate"))?;
        Ok((answer.trim().to_owned(), texts))
    }

    pub fn chat(&self, query: &str, opts: &RequestOptions) -> Result<ChatResult, PipelineError> {
        Self::check_query(query)?;
        self.stats.chats.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let mut timer = Timer::default();
        let partition = opts.partition.as_deref().unwrap_or(&self.cfg.partition_key);
        let use_cache = opts.use_cache.unwrap_or(self.cfg.use_cache);

        let mut query_vec = None;
        if use_cache {
            let vec = timer
                .time("embed", || self.gateway.embed_one(query))
                .map_err(at("embed"))?;
            let now = self.clock.now_secs();
            match timer.time("cache", || self.cache.lookup(partition, query, &vec, now)) {
                Ok(Some(hit)) => {
                    let mut timings = timer.0;
                    timings.insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
                    return Ok(ChatResult {
                        answer: hit.answer,
                        sources: hit.sources,
                        route: hit.route,
                        cache_hit: true,
                        hops_used: 0,
                        verdict: None,
                        timings,
                        contexts: Vec::new(),
                        degraded: false,
                    });
                }
                Ok(None) => {}
                Err(e) => tracing::warn!(error = %e, "cache lookup failed"),
            }
            query_vec = Some(vec);
        }

        let route = timer
            .time("route", || self.transformer().route(query))
            .map_err(at("route"))?;

        let (answer, sources, contexts, hops_used, verdict, degraded) =
            if route == RouteDecision::External {
                let web = timer
                    .time("web_search", || {
                        self.gateway.web_search(query, self.cfg.crag.web_top_k)
                    })
                    .map_err(at("web_search"))?;
                let (answer, contexts) = self.generate(&mut timer, query, &[], &web)?;
                (answer, web_sources(&web), contexts, 0, None, false)
            } else {
                let mut hops = 0;
                let mut hop_route = route;
                let mut hop_query = query.to_owned();
                let outcome: CragOutcome = loop {
                    hops += 1;
                    let vec = if hops == 1 { query_vec.as_ref() } else { None };
                    let (candidates, used_query) =
                        self.retrieve(&mut timer, &hop_query, hop_route, vec, partition)?;
                    let reranked = if candidates.is_empty() {
                        Vec::new()
                    } else {
                        timer
                            .time("rerank", || {
                                rerank(&self.gateway, query, candidates, self.cfg.top_n_rerank)
                            })
                            .map_err(at("rerank"))?
                    };
                    let outcome = timer
                        .time("crag", || {
                            crag_evaluate(
                                &self.gateway,
                                &self.prompts,
                                query,
                                reranked,
                                &self.cfg.crag,
                            )
                        })
                        .map_err(at("crag"))?;
                    let retry = outcome.verdict == CragVerdict::Incorrect
                        && outcome.web_results.is_empty()
                        && hops < self.cfg.max_hops;
                    if !retry {
                        break outcome;
                    }
                    hop_route = RouteDecision::Complex;
                    hop_query = used_query;
                };
                let ctx: Vec<(String, String)> = outcome
                    .retained
                    .iter()
                    .map(|r| (r.scored.chunk.id.clone(), r.context.clone()))
                    .collect();
                let (answer, contexts) =
                    self.generate(&mut timer, query, &ctx, &outcome.web_results)?;
                let mut sources: Vec<Source> = outcome
                    .retained
                    .iter()
                    .map(|r| Source {
                        id: r.scored.chunk.id.clone(),
                        score: r.scored.score,
                        kind: SourceKind::Chunk,
                    })
                    .collect();
                sources.extend(web_sources(&outcome.web_results));
                (
                    answer,
                    sources,
                    contexts,
                    hops,
                    Some(outcome.verdict),
                    outcome.degraded,
                )
            };

        if let Some(vec) = query_vec {
            let entry = CacheEntry {
                partition_key: partition.to_owned(),
                query_text: query.to_owned(),
                query_vec: vec,
                answer: answer.clone(),
                sources: sources.clone(),
                route,
                created_at: self.clock.now_secs(),
                ttl_seconds: 0,
            };
            if let Err(e) = timer.time("cache", || self.cache.insert(entry)) {
                tracing::warn!(error = %e, "cache insert failed");
            }
        }

        let mut timings = timer.0;
        timings.insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
        Ok(ChatResult {
            answer,
            sources,
            route,
            cache_hit: false,
            hops_used,
            verdict,
            timings,
            contexts,
            degraded,
        })
    }
}

fn web_sources(web: &[WebResult]) -> Vec<Source> {
    web.iter()
        .map(|w| Source {
            id: w.url.clone(),
            score: w.score,
            kind: SourceKind::Web,
        })
        .collect()
}
