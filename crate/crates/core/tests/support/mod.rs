//! Generators and independent oracles shared by the property suites.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use ragway_core::retrieval::{Bm25Params, HybridIndex};
use ragway_core::splitter::detect_code_blocks;
use ragway_core::types::{Chunk, Document, EmbeddingVector, Span};

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "index", "query", "vector", "token", "cache", "route",
    "shard", "ledger", "merge", "cursor", "fence", "table", "graph", "node", "edge", "batch",
];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 3..14).prop_map(|w| {
        let mut s = w.join(" ");
        s.push('.');
        s
    })
}

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..8).prop_map(|s| s.join(" "))
}

fn heading() -> impl Strategy<Value = String> {
    (
        1usize..=4,
        prop::collection::vec(prop::sample::select(WORDS), 1..4),
    )
        .prop_map(|(lvl, w)| format!("{} {}", "#".repeat(lvl), w.join(" ")))
}

fn code_block() -> impl Strategy<Value = String> {
    // Some blocks exceed the smallest size limit so atomicity must win.
    (prop::sample::select(&["", "rust", "sh"][..]), 1usize..120).prop_map(|(lang, lines)| {
        let body: Vec<String> = (0..lines)
            .map(|i| format!("let v{i} = {i}; // line"))
            .collect();
        format!("```{lang}\n{}\n```", body.join("\n"))
    })
}

fn block() -> impl Strategy<Value = String> {
    prop_oneof![4 => paragraph(), 2 => heading(), 1 => code_block()]
}

/// Markdown mixing headings, paragraphs and fenced code blocks.
pub fn markdown() -> impl Strategy<Value = String> {
    prop::collection::vec(block(), 1..24)
        .prop_map(|b| b.join("\n\n"))
        .prop_filter("non-blank", |s| !s.trim().is_empty())
}

pub fn doc(content: &str, partition: &str) -> Document {
    Document::new("doc.md", content, partition).with_metadata("doc_type", "official")
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Every split invariant, checked against the source document.
pub fn check_split(doc: &Document, max_chars: usize, chunks: &[Chunk]) -> Result<(), String> {
    let text = doc.content.as_str();
    if chunks.is_empty() {
        return Err("no chunks".into());
    }
    let joined: String = chunks
        .iter()
        .map(|c| c.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    if squash(&joined) != squash(text) {
        return Err("concatenated chunks differ from source".into());
    }
    if chunks[0].char_span.start != 0 || chunks.last().unwrap().char_span.end != text.len() {
        return Err("spans do not cover the document".into());
    }
    for w in chunks.windows(2) {
        if w[0].char_span.end != w[1].char_span.start {
            return Err(format!("gap or overlap at {}", w[0].char_span.end));
        }
    }
    let code = detect_code_blocks(text);
    for c in chunks {
        let span = c.char_span;
        if span.end <= span.start || c.content.trim().is_empty() {
            return Err("empty chunk".into());
        }
        if c.partition_key != doc.partition_key || c.metadata != doc.metadata {
            return Err(format!("chunk {} lost partition or metadata", c.id));
        }
        let mut oversize = false;
        for s in &code {
            let inside = span.start <= s.start && s.end <= span.end;
            let outside = s.end <= span.start || span.end <= s.start;
            if !inside && !outside {
                return Err(format!(
                    "code block {}..{} straddles chunk {}..{}",
                    s.start, s.end, span.start, span.end
                ));
            }
            if inside && text[s.start..s.end].chars().count() > max_chars {
                oversize = true;
            }
        }
        if !oversize && c.content.chars().count() > max_chars {
            return Err(format!(
                "chunk of {} chars exceeds {max_chars}",
                c.content.chars().count()
            ));
        }
    }
    Ok(())
}

/// Brute-force BM25 over a list of token vectors, scored straight from the formula.
pub fn bm25_oracle(
    docs: &[(String, Vec<String>)],
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        for term in &terms {
            let tf = toks.iter().filter(|t| t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    sort_desc(&mut out);
    out
}

pub fn cosine_oracle(docs: &[(String, Vec<f64>)], q: &[f64]) -> Vec<(String, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut out: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            (id.clone(), dot / (norm(v) * qn))
        })
        .collect();
    sort_desc(&mut out);
    out
}

/// Exact fraction with positive denominator, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for Ratio {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

/// Reciprocal rank fusion in exact arithmetic: each list containing `d`
/// adds `1 / (k + rank)`, ranks starting at 1, first occurrence only.
/// Sorted by exact score descending, id ascending on ties.
pub fn rrf_oracle(lists: &[Vec<String>], k: u32) -> Vec<(String, Ratio)> {
    let mut scores: BTreeMap<String, Ratio> = BTreeMap::new();
    for list in lists {
        let mut seen = BTreeSet::new();
        for (pos, id) in list.iter().enumerate() {
            if !seen.insert(id) {
                continue;
            }
            let term = Ratio::new(1, u128::from(k) + pos as u128 + 1);
            let e = scores.entry(id.clone()).or_insert(Ratio::new(0, 1));
            *e = e.add(term);
        }
    }
    let mut out: Vec<(String, Ratio)> = scores.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Score descending, id ascending on ties.
pub fn sort_desc(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

pub const VOCAB: &[&str] = &[
    "apple", "birch", "cedar", "delta", "ember", "fjord", "glade", "heron",
];
pub const DIM: usize = 6;

#[derive(Debug, Clone)]
pub struct Item {
    pub partition: usize,
    pub words: Vec<&'static str>,
    pub vector: Vec<f64>,
}

pub fn item(partitions: usize) -> impl Strategy<Value = Item> {
    (
        0..partitions,
        prop::collection::vec(prop::sample::select(VOCAB), 1..12),
        prop::collection::vec(-1.0f64..1.0, DIM)
            .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3)),
    )
        .prop_map(|(partition, words, vector)| Item {
            partition,
            words,
            vector,
        })
}

/// Random chunks spread over up to `max_parts` partitions named `p0`, `p1`, ...
pub fn corpus(max_chunks: usize, max_parts: usize) -> impl Strategy<Value = Vec<Item>> {
    (1..=max_parts).prop_flat_map(move |p| prop::collection::vec(item(p), 1..=max_chunks))
}

pub fn chunk(i: usize, it: &Item) -> Chunk {
    Chunk {
        id: format!("c{i:03}"),
        doc_id: format!("d{i}"),
        content: it.words.join(" "),
        heading_path: Vec::new(),
        partition_key: format!("p{}", it.partition),
        metadata: Default::default(),
        char_span: Span::new(0, 1),
    }
}

pub fn build(items: &[Item]) -> HybridIndex {
    let mut idx = HybridIndex::new(Bm25Params::default());
    let rows = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            (
                chunk(i, it),
                EmbeddingVector::new(it.vector.clone()).unwrap(),
            )
        })
        .collect();
    idx.upsert_chunks(rows).unwrap();
    idx
}

pub fn query_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, DIM)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}
