use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use ragway_core::eval::{run_eval, EvalConfig, EvalReport};
use ragway_core::gateway::mock::{MockGenerator, MockStack};
use ragway_core::gateway::Gateway;
use ragway_core::pipeline::{ChatResult, Pipeline, RequestOptions};
use ragway_core::prompts::PromptCatalog;
use ragway_core::retrieval::HybridIndex;
use ragway_core::splitter::{document_from_markdown, split_document, SplitError};
use ragway_core::types::{Chunk, EmbeddingVector, ScoredChunk};
use ragway_mcp::{bind_http, serve_http, serve_stdio, shutdown_signal, McpServer};
use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::AppConfig;

pub fn build_gateway(cfg: &AppConfig) -> Result<Gateway> {
    if cfg.mock {
        let mut generator = MockGenerator::new();
        if cfg.mock_backend.generator_latency_ms > 0 {
            generator = generator
                .with_latency(Duration::from_millis(cfg.mock_backend.generator_latency_ms));
        }
        return Ok(MockStack {
            dim: cfg.mock_backend.embedding_dim,
            generator,
            ..MockStack::default()
        }
        .gateway());
    }
    Gateway::from_config(&cfg.gateway)
        .context("cannot configure model services (use --mock to run offline)")
}

pub fn load_prompts(cfg: &AppConfig) -> Result<PromptCatalog> {
    match &cfg.prompt_catalog {
        Some(p) => {
            PromptCatalog::load(p).with_context(|| format!("prompt catalog {}", p.display()))
        }
        None => Ok(PromptCatalog::default()),
    }
}

pub fn load_index(path: &Path) -> Result<HybridIndex> {
    if !path.exists() {
        bail!(
            "index snapshot {} not found; build it first with `ragway ingest --input <DIR> --partition <KEY>`",
            path.display()
        );
    }
    HybridIndex::load(path)
        .with_context(|| format!("cannot load index snapshot {}", path.display()))
}

pub fn build_pipeline(cfg: &AppConfig) -> Result<Pipeline> {
    let index = load_index(&cfg.index_path)?;
    let gateway = build_gateway(cfg)?;
    Pipeline::new(cfg.pipeline.clone(), gateway, load_prompts(cfg)?, index).map_err(|e| anyhow!(e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub docs: usize,
    pub chunks: usize,
    pub skipped: usize,
    pub index_path: PathBuf,
}

enum FileOutcome {
    Skipped,
    Indexed {
        doc_id: String,
        items: Vec<(Chunk, EmbeddingVector)>,
    },
}

fn ingest_file(
    cfg: &AppConfig,
    gateway: &Gateway,
    root: &Path,
    path: &Path,
    partition: &str,
) -> Result<FileOutcome> {
    let raw = match std::fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(file = %path.display(), error = %e, "skipping unreadable file");
            return Ok(FileOutcome::Skipped);
        }
    };
    let rel = path.strip_prefix(root).unwrap_or(path);
    let doc_id = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/");
    let doc = document_from_markdown(&doc_id, &raw, partition);
    let chunks = match split_document(&doc, &cfg.splitter) {
        Ok(c) => c,
        Err(SplitError::EmptyDocument(_)) => {
            tracing::warn!(file = %path.display(), "skipping empty document");
            return Ok(FileOutcome::Skipped);
        }
        Err(e) => return Err(e).with_context(|| format!("cannot split {}", path.display())),
    };
    let mut items = Vec::with_capacity(chunks.len());
    for batch in chunks.chunks(cfg.ingest.batch_size) {
        let texts: Vec<String> = batch.iter().map(|c| c.content.clone()).collect();
        let vecs = gateway
            .embed(&texts)
            .with_context(|| format!("embedding failed for {}", path.display()))?;
        items.extend(batch.iter().cloned().zip(vecs));
    }
    Ok(FileOutcome::Indexed { doc_id, items })
}

/// Split and embed every `*.md` file under `input`, replace those documents
/// in the index, and write the snapshot. Nothing is written on failure.
pub fn ingest(
    cfg: &AppConfig,
    gateway: &Gateway,
    input: &Path,
    partition: &str,
) -> Result<IngestSummary> {
    if !input.is_dir() {
        bail!("input directory {} does not exist", input.display());
    }
    let mut skipped = 0;
    let mut files = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        match entry {
            Ok(e) if e.file_type().is_file() => {
                let is_md = e
                    .path()
                    .extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("md"));
                if is_md {
                    files.push(e.into_path());
                }
            }
            Ok(_) => {}
            Err(e) => {
                tracing::warn!(error = %e, "skipping unreadable path");
                skipped += 1;
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.ingest.parallelism)
        .build()?;
    let outcomes: Vec<Result<FileOutcome>> = pool.install(|| {
        files
            .par_iter()
            .map(|f| ingest_file(cfg, gateway, input, f, partition))
            .collect()
    });
    let total = outcomes.len();
    let mut docs = Vec::new();
    for (done, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(FileOutcome::Skipped) => skipped += 1,
            Ok(FileOutcome::Indexed { doc_id, items }) => docs.push((doc_id, items)),
            Err(e) => {
                return Err(e.context(format!(
                    "ingestion aborted after {done} of {total} files; index {} left unchanged",
                    cfg.index_path.display()
                )))
            }
        }
    }

    let mut index = if cfg.index_path.exists() {
        load_index(&cfg.index_path)?
    } else {
        HybridIndex::default()
    };
    let partitions: Vec<String> = index.partitions().map(str::to_owned).collect();
    let mut chunks = 0;
    let mut all = Vec::new();
    for (doc_id, items) in &docs {
        for p in &partitions {
            index.remove_document(p, doc_id);
        }
        chunks += items.len();
        all.extend(items.iter().cloned());
    }
    index
        .upsert_chunks(all)
        .context("cannot add chunks to the index")?;
    index
        .save(&cfg.index_path)
        .with_context(|| format!("cannot write index snapshot {}", cfg.index_path.display()))?;
    Ok(IngestSummary {
        docs: docs.len(),
        chunks,
        skipped,
        index_path: cfg.index_path.clone(),
    })
}

pub fn serve_stdio_cmd(cfg: &AppConfig) -> Result<()> {
    let server =
        McpServer::new(Arc::new(build_pipeline(cfg)?)).with_protocol_version(&cfg.protocol_version);
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_stdio(&server, stdin.lock(), stdout.lock())?;
    Ok(())
}

pub fn serve_http_cmd(cfg: &AppConfig) -> Result<()> {
    let server =
        McpServer::new(Arc::new(build_pipeline(cfg)?)).with_protocol_version(&cfg.protocol_version);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = bind_http(&cfg.bind).await?;
        eprintln!("listening on http://{}/rpc", listener.local_addr()?);
        serve_http(server, listener, shutdown_signal()).await?;
        anyhow::Ok(())
    })
}

pub fn render_chat(r: &ChatResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "answer: {}", r.answer);
    let _ = writeln!(s, "route: {}", r.route);
    let _ = writeln!(s, "cache_hit: {}", r.cache_hit);
    let _ = writeln!(s, "hops_used: {}", r.hops_used);
    let _ = writeln!(
        s,
        "verdict: {}",
        r.verdict
            .map_or_else(|| "none".to_owned(), |v| v.to_string())
    );
    if r.degraded {
        let _ = writeln!(s, "degraded: true");
    }
    let _ = writeln!(s, "sources:");
    for src in &r.sources {
        let _ = writeln!(s, "  - {} ({:.4})", src.id, src.score);
    }
    let _ = writeln!(s, "timings_ms:");
    for (stage, ms) in &r.timings {
        let _ = writeln!(s, "  {stage}: {ms:.3}");
    }
    s
}

pub fn render_search(hits: &[ScoredChunk]) -> String {
    let mut s = String::new();
    for (i, h) in hits.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}. {} ({:.4}) [{}]",
            i + 1,
            h.chunk.id,
            h.score,
            h.chunk.heading_path.join(" > ")
        );
        for line in h.chunk.content.lines() {
            let _ = writeln!(s, "   {line}");
        }
    }
    if hits.is_empty() {
        s.push_str("no results\n");
    }
    s
}

pub struct QueryArgs<'a> {
    pub text: &'a str,
    pub search_only: bool,
    pub no_cache: bool,
    pub top_k: Option<usize>,
    pub json: bool,
}

pub fn query(cfg: &AppConfig, args: &QueryArgs<'_>) -> Result<String> {
    let pipeline = build_pipeline(cfg)?;
    let opts = RequestOptions {
        partition: None,
        use_cache: args.no_cache.then_some(false),
        top_k: args.top_k,
    };
    if args.search_only {
        let hits = pipeline.search(args.text, &opts)?;
        return Ok(if args.json {
            serde_json::to_string_pretty(&hits)? + "\n"
        } else {
            render_search(&hits)
        });
    }
    let r = pipeline.chat(args.text, &opts)?;
    Ok(if args.json {
        serde_json::to_string_pretty(&r)? + "\n"
    } else {
        render_chat(&r)
    })
}

pub fn default_report_path(dataset: &Path) -> PathBuf {
    let mut p = dataset.as_os_str().to_owned();
    p.push(".report.jsonl");
    PathBuf::from(p)
}

pub fn eval(cfg: &AppConfig, dataset: &Path, no_cache: bool, report: &Path) -> Result<EvalReport> {
    let pipeline = build_pipeline(cfg)?;
    let ecfg = EvalConfig {
        // A judge needs a real model; scripted answers would only grade themselves.
        judge: cfg.eval.judge && !cfg.mock,
        ..cfg.eval.clone()
    };
    let result = run_eval(dataset, &pipeline, &ecfg, no_cache)?;
    result.save(report)?;
    Ok(result)
}
