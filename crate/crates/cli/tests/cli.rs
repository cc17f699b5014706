use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ragway(index: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragway"))
        .arg("--mock")
        .arg("--index")
        .arg(index)
        .args(args)
        .env_remove("RAGWAY_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ingest_corpus(index: &Path) {
    let corpus = fixtures().join("corpus");
    let o = ragway(index, &["ingest", "--input", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ingest_counts_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("docs");
    std::fs::create_dir_all(input.join("nested")).unwrap();
    std::fs::write(
        input.join("a.md"),
        "# A\n\n## One\n\nFirst section.\n\n## Two\n\nSecond section.\n",
    )
    .unwrap();
    std::fs::write(input.join("nested/b.md"), "# B\n\nOnly paragraph.\n").unwrap();
    std::fs::write(
        input.join("c.md"),
        "---\npartition: other\n---\n# C\n\nOther partition.\n",
    )
    .unwrap();
    std::fs::write(input.join("blank.md"), "  \n").unwrap();
    std::fs::write(input.join("notes.txt"), "ignored").unwrap();
    let index = dir.path().join("idx.json");
    let o = ragway(&index, &["ingest", "--input", input.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("docs=3 chunks=4 skipped=1"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn reingest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("idx.json");
    ingest_corpus(&index);
    let first = std::fs::read(&index).unwrap();
    ingest_corpus(&index);
    assert_eq!(first, std::fs::read(&index).unwrap());
}

#[test]
fn empty_input_writes_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty");
    std::fs::create_dir(&input).unwrap();
    let index = dir.path().join("idx.json");
    let o = ragway(&index, &["ingest", "--input", input.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("docs=0 chunks=0"));
    assert!(index.exists());
}

#[test]
fn missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ragway(
        &dir.path().join("idx.json"),
        &["ingest", "--input", "/nonexistent/dir"],
    );
    assert!(!o.status.success());
}

#[test]
fn query_prints_answer_and_source() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("idx.json");
    ingest_corpus(&index);
    let o = ragway(
        &index,
        &["query", "--text", "How long until cache entries expire?"],
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("seven days"), "{out}");
    assert!(out.contains("sources:\n  - "), "{out}");

    let o = ragway(
        &index,
        &[
            "query",
            "--json",
            "--search-only",
            "--top-k",
            "2",
            "--text",
            "BM25 saturation",
        ],
    );
    let hits: Vec<Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0]["chunk"]["doc_id"], "retrieval.md");
}

#[test]
fn query_without_index_names_the_fix() {
    let dir = tempfile::tempdir().unwrap();
    let o = ragway(
        &dir.path().join("missing.json"),
        &["query", "--text", "anything"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ragway ingest --input"));
}

#[test]
fn serve_stdio_lists_tools() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("idx.json");
    ingest_corpus(&index);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ragway"))
        .args([
            "--mock",
            "--index",
            index.to_str().unwrap(),
            "serve",
            "--transport",
            "stdio",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"jsonrpc\":\"2.0\",\"id\":7,\"method\":\"tools/list\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["id"], 7);
    let names: Vec<&str> = v["result"]["tools"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["rag_chat", "rag_search"]);
}

#[cfg(unix)]
#[test]
fn serve_http_stops_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("idx.json");
    ingest_corpus(&index);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ragway"))
        .args([
            "--mock",
            "--index",
            index.to_str().unwrap(),
            "serve",
            "--transport",
            "http",
            "--bind",
            "127.0.0.1:0",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_owned();
    let body: Value = ureq::post(&url)
        .send_json(serde_json::json!({"jsonrpc": "2.0", "id": 1, "method": "ping"}))
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(body["id"], 1);
    let killed = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    assert!(child.wait().unwrap().success());
}

#[test]
fn eval_writes_report_without_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("idx.json");
    ingest_corpus(&index);
    let dataset = fixtures().join("dataset.jsonl");
    let report = dir.path().join("report.jsonl");
    let o = ragway(
        &index,
        &[
            "eval",
            "--no-cache",
            "--dataset",
            dataset.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("cache hit rate             0.0000"), "{out}");
    let lines = std::fs::read_to_string(&report).unwrap();
    assert_eq!(lines.lines().count(), 11);
    assert!(dir.path().join("report.jsonl.summary.txt").exists());
}

#[test]
fn invalid_config_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[pipeline]\nmax_hops = 0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ragway"))
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--mock",
            "query",
            "--text",
            "x",
        ])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).contains("not found"));
}
