//! Answer and retrieval quality metrics over line-delimited QA datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::SourceKind;
use crate::pipeline::{Pipeline, RequestOptions};
use crate::post_retrieval::parse_score;
use crate::prompts::context_block;
use crate::text::{normalize_answer, token_f1, tokenize};
use crate::types::{CragVerdict, RouteDecision};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSample {
    pub id: String,
    pub query: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_chunk_ids: Vec<String>,
    #[serde(default)]
    pub sample_type: String,
}

impl EvalSample {
    /// Parse one dataset line.
    pub fn parse(line: &str) -> Result<Self, String> {
        let s: EvalSample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if s.id.trim().is_empty() {
            return Err("id must be non-empty".into());
        }
        if s.query.trim().is_empty() || s.gold_answer.trim().is_empty() {
            return Err("query and gold_answer must be non-empty".into());
        }
        Ok(s)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset rejected: {invalid} of {total} lines are invalid")]
    Dataset { invalid: usize, total: usize },
    #[error("dataset has no samples")]
    Empty,
    #[error("invalid eval configuration: {0}")]
    Config(String),
    #[error("cannot write report: {0}")]
    Report(#[from] std::io::Error),
}

/// 1 iff the normalized strings are equal.
pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

/// Multiset token-overlap F1.
pub fn f1_score(pred: &str, gold: &str) -> f64 {
    token_f1(&tokenize(pred), &tokenize(gold))
}

/// `(recall, precision)` of retrieved ids against gold ids, as sets.
pub fn retrieval_metrics<S: AsRef<str>>(retrieved: &[S], gold: &[S]) -> (f64, f64) {
    let r: BTreeSet<&str> = retrieved.iter().map(AsRef::as_ref).collect();
    let g: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let common = r.intersection(&g).count() as f64;
    let recall = if g.is_empty() {
        1.0
    } else {
        common / g.len() as f64
    };
    let precision = match (r.is_empty(), g.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        (false, _) => common / r.len() as f64,
    };
    (recall, precision)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub sample_type: String,
    pub em: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub latency_ms: f64,
    pub cache_hit: bool,
    pub route: Option<RouteDecision>,
    pub hops_used: u32,
    pub verdict: Option<CragVerdict>,
    pub retrieved_ids: Vec<String>,
    pub answer: String,
    pub factuality: Option<f64>,
    pub timings: BTreeMap<String, f64>,
    /// Pipeline failure for this sample; its metrics are then all zero.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub skipped_lines: usize,
    pub failed: usize,
    pub mean_em: f64,
    pub mean_f1: f64,
    pub mean_recall: f64,
    pub mean_precision: f64,
    pub p50_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub cache_hit_rate: f64,
    /// Present only when a judge model scored the answers.
    pub mean_factuality: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// data at or below it. Zero for no data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

impl Aggregates {
    pub fn from_rows(rows: &[EvalRow], skipped_lines: usize) -> Self {
        let latencies: Vec<f64> = rows.iter().map(|r| r.latency_ms).collect();
        let judged: Vec<f64> = rows.iter().filter_map(|r| r.factuality).collect();
        Self {
            samples: rows.len(),
            skipped_lines,
            failed: rows.iter().filter(|r| r.error.is_some()).count(),
            mean_em: mean(rows.iter().map(|r| r.em)),
            mean_f1: mean(rows.iter().map(|r| r.f1)),
            mean_recall: mean(rows.iter().map(|r| r.recall)),
            mean_precision: mean(rows.iter().map(|r| r.precision)),
            p50_latency_ms: percentile(&latencies, 50.0),
            p95_latency_ms: percentile(&latencies, 95.0),
            cache_hit_rate: mean(rows.iter().map(|r| f64::from(u8::from(r.cache_hit)))),
            mean_factuality: (!judged.is_empty()).then(|| mean(judged.into_iter())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub no_cache: bool,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    /// One JSON object per row, then one aggregate record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in &self.rows {
            let mut v = serde_json::to_value(row).expect("serializable");
            v["record"] = "row".into();
            writeln!(w, "{v}")?;
        }
        let mut v = serde_json::to_value(&self.aggregates).expect("serializable");
        v["record"] = "aggregate".into();
        v["no_cache"] = self.no_cache.into();
        writeln!(w, "{v}")?;
        w.flush()
    }

    pub fn summary_table(&self) -> String {
        let a = &self.aggregates;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Evaluation summary (cache {})",
            if self.no_cache { "disabled" } else { "enabled" }
        );
        let _ = writeln!(
            s,
            "EM compares answers after lowercasing, collapsing whitespace and dropping trailing . ! ?; F1 is multiset token overlap."
        );
        let _ = writeln!(s, "{:<20} {:>12}", "metric", "value");
        let _ = writeln!(s, "{:-<20} {:->12}", "", "");
        let mut row = |name: &str, value: String| {
            let _ = writeln!(s, "{name:<20} {value:>12}");
        };
        row("samples", a.samples.to_string());
        row("skipped lines", a.skipped_lines.to_string());
        row("failed samples", a.failed.to_string());
        row("exact match", format!("{:.4}", a.mean_em));
        row("f1", format!("{:.4}", a.mean_f1));
        row("recall", format!("{:.4}", a.mean_recall));
        row("precision", format!("{:.4}", a.mean_precision));
        row("latency p50 ms", format!("{:.2}", a.p50_latency_ms));
        row("latency p95 ms", format!("{:.2}", a.p95_latency_ms));
        row("cache hit rate", format!("{:.4}", a.cache_hit_rate));
        row(
            "factuality",
            a.mean_factuality
                .map_or_else(|| "n/a".to_owned(), |f| format!("{f:.4}")),
        );
        s
    }

    /// Write `<path>` (line records) and `<path>.summary.txt`.
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))?;
        let mut summary = path.as_os_str().to_owned();
        summary.push(".summary.txt");
        std::fs::write(summary, self.summary_table())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples evaluated at once.
    pub parallelism: usize,
    /// Score answers with the judge prompt. Only meaningful with a real model.
    pub judge: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            parallelism: 4,
            judge: false,
        }
    }
}

/// Parse a dataset, skipping blank lines. Invalid lines are logged and
/// counted; at least half invalid rejects the whole file.
pub fn parse_dataset(text: &str) -> Result<(Vec<EvalSample>, usize), EvalError> {
    let mut samples = Vec::new();
    let mut invalid = 0;
    let mut total = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match EvalSample::parse(line) {
            Ok(s) => samples.push(s),
            Err(e) => {
                tracing::warn!(line = n + 1, error = %e, "skipping invalid sample");
                invalid += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    if invalid * 2 >= total {
        return Err(EvalError::Dataset { invalid, total });
    }
    Ok((samples, invalid))
}

pub fn load_dataset(path: &Path) -> Result<(Vec<EvalSample>, usize), EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

fn judge(pipeline: &Pipeline, answer: &str, contexts: &[String]) -> Option<f64> {
    let block: String = contexts
        .iter()
        .enumerate()
        .map(|(i, c)| context_block("context", i + 1, &(i + 1).to_string(), c))
        .collect();
    let (system, user) = pipeline
        .prompts()
        .render("judge", &[("context", &block), ("answer", answer)]);
    match pipeline.gateway().complete(&user, &system) {
        Ok(r) => Some(parse_score(&r)),
        Err(e) => {
            tracing::warn!(error = %e, "judge call failed");
            None
        }
    }
}

pub fn evaluate_sample(
    pipeline: &Pipeline,
    sample: &EvalSample,
    cfg: &EvalConfig,
    no_cache: bool,
) -> EvalRow {
    let opts = RequestOptions {
        use_cache: Some(!no_cache),
        ..RequestOptions::default()
    };
    let start = Instant::now();
    let result = pipeline.chat(&sample.query, &opts);
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut row = EvalRow {
        id: sample.id.clone(),
        sample_type: sample.sample_type.clone(),
        em: 0.0,
        f1: 0.0,
        recall: 0.0,
        precision: 0.0,
        latency_ms,
        cache_hit: false,
        route: None,
        hops_used: 0,
        verdict: None,
        retrieved_ids: Vec::new(),
        answer: String::new(),
        factuality: None,
        timings: BTreeMap::new(),
        error: None,
    };
    match result {
        Err(e) => row.error = Some(e.to_string()),
        Ok(r) => {
            let retrieved: Vec<String> = r
                .sources
                .iter()
                .filter(|s| s.kind == SourceKind::Chunk)
                .map(|s| s.id.clone())
                .collect();
            let (recall, precision) = retrieval_metrics(&retrieved, &sample.gold_chunk_ids);
            row.em = f64::from(exact_match(&r.answer, &sample.gold_answer));
            row.f1 = f1_score(&r.answer, &sample.gold_answer);
            row.recall = recall;
            row.precision = precision;
            row.cache_hit = r.cache_hit;
            row.route = Some(r.route);
            row.hops_used = r.hops_used;
            row.verdict = r.verdict;
            row.retrieved_ids = retrieved;
            if cfg.judge && !r.contexts.is_empty() {
                row.factuality = judge(pipeline, &r.answer, &r.contexts);
            }
            row.answer = r.answer;
            row.timings = r.timings;
        }
    }
    row
}

/// Evaluate samples concurrently; rows keep dataset order.
pub fn evaluate_samples(
    pipeline: &Pipeline,
    samples: &[EvalSample],
    cfg: &EvalConfig,
    no_cache: bool,
) -> Result<Vec<EvalRow>, EvalError> {
    if cfg.parallelism == 0 {
        return Err(EvalError::Config("parallelism must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    Ok(pool.install(|| {
        samples
            .par_iter()
            .map(|s| evaluate_sample(pipeline, s, cfg, no_cache))
            .collect()
    }))
}

pub fn run_eval(
    dataset: &Path,
    pipeline: &Pipeline,
    cfg: &EvalConfig,
    no_cache: bool,
) -> Result<EvalReport, EvalError> {
    let (samples, skipped) = load_dataset(dataset)?;
    let rows = evaluate_samples(pipeline, &samples, cfg, no_cache)?;
    Ok(EvalReport {
        no_cache,
        aggregates: Aggregates::from_rows(&rows, skipped),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("The Answer.", "the answer"), 1);
        assert_eq!(exact_match("a", "b"), 0);
        assert_eq!(exact_match("x", "x"), 1);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score("same text", "same text"), 1.0);
        assert!((f1_score("a b", "b c") - 0.5).abs() < 1e-12);
        assert!((f1_score("a a", "a") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn retrieval_examples() {
        let (r, p) = retrieval_metrics(&["a", "b", "c"], &["a"]);
        assert_eq!(r, 1.0);
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(retrieval_metrics::<&str>(&[], &["a"]), (0.0, 0.0));
        assert_eq!(retrieval_metrics(&["x"], &[]).0, 1.0);
        assert_eq!(retrieval_metrics::<&str>(&[], &[]), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn em_implies_full_f1(p in "[a-zA-Z .!?]{0,30}", g in "[a-zA-Z .!?]{0,30}") {
            if exact_match(&p, &g) == 1 {
                prop_assert_eq!(f1_score(&p, &g), 1.0);
            }
        }

        #[test]
        fn f1_symmetric(p in "[a-c ]{0,20}", g in "[a-c ]{0,20}") {
            prop_assert_eq!(f1_score(&p, &g), f1_score(&g, &p));
        }

        #[test]
        fn retrieval_metrics_in_unit_interval(
            r in prop::collection::vec("[a-e]", 0..6),
            g in prop::collection::vec("[a-e]", 0..6),
        ) {
            let (rec, prec) = retrieval_metrics(&r, &g);
            prop_assert!((0.0..=1.0).contains(&rec) && (0.0..=1.0).contains(&prec));
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(percentile(&v, 50.0), 35.0);
        assert_eq!(percentile(&v, 95.0), 50.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn dataset_parsing_thresholds() {
        let good = r#"{"id":"1","query":"q","gold_answer":"a"}"#;
        let bad = "{oops";
        let (s, skipped) = parse_dataset(&format!("{good}\n\n{good}\n{bad}\n")).unwrap();
        assert_eq!((s.len(), skipped), (2, 1));
        assert!(matches!(
            parse_dataset(&format!("{good}\n{bad}\n")),
            Err(EvalError::Dataset {
                invalid: 1,
                total: 2
            })
        ));
        assert!(matches!(parse_dataset("\n"), Err(EvalError::Empty)));
        assert!(EvalSample::parse(r#"{"id":"1","query":" ","gold_answer":"a"}"#).is_err());
    }

    #[test]
    fn report_formats() {
        let row = EvalRow {
            id: "s1".into(),
            sample_type: "factuality_check".into(),
            em: 1.0,
            f1: 1.0,
            recall: 1.0,
            precision: 0.5,
            latency_ms: 3.0,
            cache_hit: false,
            route: Some(RouteDecision::Simple),
            hops_used: 1,
            verdict: Some(CragVerdict::Correct),
            retrieved_ids: vec!["c".into()],
            answer: "x".into(),
            factuality: None,
            timings: BTreeMap::new(),
            error: None,
        };
        let rows = vec![
            row.clone(),
            EvalRow {
                em: 0.0,
                latency_ms: 5.0,
                ..row
            },
        ];
        let report = EvalReport {
            no_cache: true,
            aggregates: Aggregates::from_rows(&rows, 0),
            rows,
        };
        assert_eq!(report.aggregates.mean_em, 0.5);
        assert_eq!(report.aggregates.mean_factuality, None);
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2]["record"], "aggregate");
        assert!(report.summary_table().contains("exact match"));
        let dir = tempfile::tempdir().unwrap();
        report.save(&dir.path().join("out/report.jsonl")).unwrap();
        assert!(dir.path().join("out/report.jsonl.summary.txt").exists());
    }
}
