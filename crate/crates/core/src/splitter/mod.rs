//! Structure-aware Markdown splitting.
//!
//! Documents are cut at H2/H3 headings (configurable). Sections that are still
//! too long are packed greedily at paragraph boundaries, falling back to line,
//! word, and finally character boundaries. Fenced code blocks are never cut;
//! a block longer than the size limit becomes its own oversize chunk.
//!
//! Chunk spans tile the document exactly. Chunk content is the span text with
//! leading blank lines and trailing whitespace removed.

mod code_blocks;
mod front_matter;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use code_blocks::{detect_code_blocks, CodeSpan};
pub use front_matter::{parse_front_matter, FrontMatter};

use crate::types::{Chunk, Document, Span};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("document {0:?} has no content")]
    EmptyDocument(String),
    #[error("document {0:?} has an empty partition key")]
    MissingPartition(String),
    #[error("invalid splitter config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitterConfig {
    pub max_chunk_chars: usize,
    pub split_heading_levels: BTreeSet<u8>,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 1500,
            split_heading_levels: [2, 3].into_iter().collect(),
        }
    }
}

impl SplitterConfig {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.max_chunk_chars < 100 {
            return Err(SplitError::Config(format!(
                "max_chunk_chars must be at least 100, got {}",
                self.max_chunk_chars
            )));
        }
        if let Some(l) = self
            .split_heading_levels
            .iter()
            .find(|l| !(1..=6).contains(*l))
        {
            return Err(SplitError::Config(format!(
                "heading level {l} outside 1..=6"
            )));
        }
        Ok(())
    }
}

/// Build a [`Document`] from a raw Markdown file, honoring front matter.
///
/// Every front matter key becomes metadata. A non-empty `partition` key
/// overrides `default_partition`.
pub fn document_from_markdown(id: &str, raw: &str, default_partition: &str) -> Document {
    let fm = parse_front_matter(raw);
    let partition = fm
        .metadata
        .get("partition")
        .filter(|p| !p.trim().is_empty())
        .cloned()
        .unwrap_or_else(|| default_partition.to_owned());
    Document {
        id: id.to_owned(),
        source_path: id.to_owned(),
        content: raw[fm.body_offset..].to_owned(),
        metadata: fm.metadata,
        partition_key: partition,
    }
}

/// Deterministic chunk id derived from partition, document id and span.
pub fn chunk_id(partition: &str, doc_id: &str, span: Span) -> String {
    let mut h = Sha256::new();
    h.update(partition.as_bytes());
    h.update([0]);
    h.update(doc_id.as_bytes());
    h.update([0]);
    h.update(format!("{}-{}", span.start, span.end).as_bytes());
    h.finalize()[..16]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn split_document(doc: &Document, cfg: &SplitterConfig) -> Result<Vec<Chunk>, SplitError> {
    cfg.validate()?;
    if doc.partition_key.is_empty() {
        return Err(SplitError::MissingPartition(doc.id.clone()));
    }
    if doc.content.trim().is_empty() {
        return Err(SplitError::EmptyDocument(doc.id.clone()));
    }
    let text = doc.content.as_str();
    let layout = Layout::new(text);
    let mut spans = Vec::new();
    for section in layout.sections(&cfg.split_heading_levels) {
        layout.pack(section, cfg.max_chunk_chars, &mut spans);
    }
    merge_blank_pieces(text, &mut spans);

    let paths = layout.heading_paths(&spans);
    Ok(spans
        .into_iter()
        .zip(paths)
        .map(|(span, heading_path)| {
            let (s, e) = trimmed_range(text, span.start, span.end);
            Chunk {
                id: chunk_id(&doc.partition_key, &doc.id, span),
                doc_id: doc.id.clone(),
                content: text[s..e].to_owned(),
                heading_path,
                partition_key: doc.partition_key.clone(),
                metadata: doc.metadata.clone(),
                char_span: span,
            }
        })
        .collect())
}

/// Range of `text[start..end]` without leading blank lines or trailing whitespace.
fn trimmed_range(text: &str, start: usize, end: usize) -> (usize, usize) {
    let slice = &text[start..end];
    let trimmed_end = start + slice.trim_end().len();
    if trimmed_end == start {
        return (start, start);
    }
    let lead_ws = slice.len() - slice.trim_start().len();
    // Keep indentation of the first content line: only drop whole blank lines.
    let lead = slice[..lead_ws].rfind('\n').map_or(0, |i| i + 1);
    (start + lead, trimmed_end)
}

fn merge_blank_pieces(text: &str, spans: &mut Vec<Span>) {
    let mut out: Vec<Span> = Vec::with_capacity(spans.len());
    let mut pending: Option<usize> = None;
    for span in spans.drain(..) {
        let start = pending.take().unwrap_or(span.start);
        let span = Span::new(start, span.end);
        if text[span.start..span.end].trim().is_empty() {
            match out.last_mut() {
                Some(prev) => prev.end = span.end,
                None => pending = Some(span.start),
            }
        } else {
            out.push(span);
        }
    }
    if let Some(start) = pending {
        // Only whitespace was seen; callers reject such documents earlier.
        out.push(Span::new(start, text.len()));
    }
    *spans = out;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AtomKind {
    Blank,
    Heading(u8),
    Code,
    Text,
}

/// One line, or one whole fenced code block.
#[derive(Debug, Clone, Copy)]
struct Atom {
    span: Span,
    kind: AtomKind,
}

impl Atom {
    fn is_content(&self) -> bool {
        matches!(self.kind, AtomKind::Code | AtomKind::Text)
    }
}

struct Layout<'a> {
    text: &'a str,
    atoms: Vec<Atom>,
    /// `chars_before[b]` = number of chars in `text[..b]` for char boundaries `b`.
    chars_before: Vec<usize>,
}

fn heading_level(line: &str) -> Option<u8> {
    let hashes = line.bytes().take_while(|b| *b == b'#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    match line[hashes..].chars().next() {
        None | Some(' ') | Some('\t') | Some('\r') | Some('\n') => Some(hashes as u8),
        _ => None,
    }
}

fn heading_text(line: &str) -> &str {
    line.trim_start_matches('#').trim()
}

impl<'a> Layout<'a> {
    fn new(text: &'a str) -> Self {
        let code = detect_code_blocks(text);
        let mut atoms = Vec::new();
        let mut code_iter = code.iter().peekable();
        let mut pos = 0;
        while pos < text.len() {
            if let Some(c) = code_iter.peek() {
                if c.start == pos {
                    let end = text[c.end..]
                        .find('\n')
                        .map_or(text.len(), |i| c.end + i + 1);
                    atoms.push(Atom {
                        span: Span::new(pos, end),
                        kind: AtomKind::Code,
                    });
                    pos = end;
                    code_iter.next();
                    continue;
                }
            }
            let end = text[pos..].find('\n').map_or(text.len(), |i| pos + i + 1);
            let line = &text[pos..end];
            let kind = if line.trim().is_empty() {
                AtomKind::Blank
            } else if let Some(level) = heading_level(line) {
                AtomKind::Heading(level)
            } else {
                AtomKind::Text
            };
            atoms.push(Atom {
                span: Span::new(pos, end),
                kind,
            });
            pos = end;
        }

        let mut chars_before = vec![0; text.len() + 1];
        let mut count = 0;
        for (b, _) in text.char_indices() {
            chars_before[b] = count;
            count += 1;
        }
        chars_before[text.len()] = count;
        Self {
            text,
            atoms,
            chars_before,
        }
    }

    /// Atom index ranges, cut before headings of the configured levels.
    /// Sections without content are folded into the following one.
    fn sections(&self, levels: &BTreeSet<u8>) -> Vec<(usize, usize)> {
        let mut raw = Vec::new();
        let mut start = 0;
        for (i, atom) in self.atoms.iter().enumerate() {
            if let AtomKind::Heading(l) = atom.kind {
                if levels.contains(&l) && i > start {
                    raw.push((start, i));
                    start = i;
                }
            }
        }
        if start < self.atoms.len() {
            raw.push((start, self.atoms.len()));
        }

        let mut out: Vec<(usize, usize)> = Vec::new();
        let mut carry: Option<usize> = None;
        let n = raw.len();
        for (idx, (s, e)) in raw.into_iter().enumerate() {
            let s = carry.take().unwrap_or(s);
            let has_content = self.atoms[s..e].iter().any(Atom::is_content);
            if !has_content && idx + 1 < n {
                carry = Some(s);
            } else {
                out.push((s, e));
            }
        }
        out
    }

    fn char_len(&self, start: usize, end: usize) -> usize {
        let (s, e) = trimmed_range(self.text, start, end);
        self.chars_before[e] - self.chars_before[s]
    }

    fn atom_at(&self, pos: usize) -> usize {
        self.atoms.partition_point(|a| a.span.end <= pos)
    }

    /// True if `[start, end)` ends on an atom boundary and holds nothing but
    /// headings and blank lines.
    fn heading_only(&self, start: usize, end: usize) -> bool {
        let first = self.atom_at(start);
        let mut i = first;
        while i < self.atoms.len() && self.atoms[i].span.start < end {
            let a = self.atoms[i];
            if a.span.end > end || a.is_content() {
                return false;
            }
            if i == first && a.span.start != start && a.kind != AtomKind::Blank {
                return false;
            }
            i += 1;
        }
        true
    }

    fn pack(&self, (first, last): (usize, usize), max: usize, out: &mut Vec<Span>) {
        let sec_end = self.atoms[last - 1].span.end;
        let mut start = self.atoms[first].span.start;
        let cuts = CutPoints::collect(self, first, last);
        while self.char_len(start, sec_end) > max {
            let cut = self.choose_cut(&cuts, start, sec_end, max);
            out.push(Span::new(start, cut));
            start = cut;
            if cut == sec_end {
                return;
            }
        }
        out.push(Span::new(start, sec_end));
    }

    fn choose_cut(&self, cuts: &CutPoints, start: usize, end: usize, max: usize) -> usize {
        let valid = |p: usize, allow_heading_only: bool| {
            self.char_len(start, p) > 0 && (allow_heading_only || !self.heading_only(start, p))
        };
        let best = |level: &[usize], allow_heading_only: bool| -> Option<usize> {
            let lo = level.partition_point(|&p| p <= start);
            let hi = level.partition_point(|&p| p < end);
            let cands = &level[lo..hi];
            let fit = cands.partition_point(|&p| self.char_len(start, p) <= max);
            let p = *cands[..fit].last()?;
            valid(p, allow_heading_only).then_some(p)
        };

        if let Some(p) = best(&cuts.block, false) {
            return p;
        }
        // Keep headings glued to an oversize code block that follows them.
        if let Some(p) = self.oversize_code_after(start, max) {
            return p;
        }
        if let Some(p) = best(&cuts.block, true)
            .or_else(|| best(&cuts.line, false))
            .or_else(|| best(&cuts.line, true))
            .or_else(|| best(&cuts.word, false))
            .or_else(|| best(&cuts.char, false))
        {
            return p;
        }
        let lo = cuts.line.partition_point(|&p| p <= start);
        cuts.line[lo..]
            .iter()
            .copied()
            .take_while(|&p| p < end)
            .find(|&p| valid(p, false))
            .unwrap_or(end)
    }

    fn oversize_code_after(&self, start: usize, max: usize) -> Option<usize> {
        let mut i = self.atom_at(start);
        if self.atoms.get(i)?.span.start != start {
            return None;
        }
        while let Some(a) = self.atoms.get(i) {
            match a.kind {
                AtomKind::Blank | AtomKind::Heading(_) => i += 1,
                AtomKind::Code if self.char_len(a.span.start, a.span.end) > max => {
                    return Some(a.span.end)
                }
                _ => return None,
            }
        }
        None
    }

    fn heading_paths(&self, spans: &[Span]) -> Vec<Vec<String>> {
        let mut stack: Vec<(u8, String)> = Vec::new();
        let mut next_atom = 0;
        let push = |stack: &mut Vec<(u8, String)>, atom: &Atom| {
            if let AtomKind::Heading(level) = atom.kind {
                if level <= 3 {
                    while stack.last().is_some_and(|(l, _)| *l >= level) {
                        stack.pop();
                    }
                    let line = &self.text[atom.span.start..atom.span.end];
                    stack.push((level, heading_text(line).to_owned()));
                }
            }
        };
        let mut paths = Vec::with_capacity(spans.len());
        for span in spans {
            // Headings before the chunk, plus the chunk's own leading headings.
            while next_atom < self.atoms.len() && self.atoms[next_atom].span.start < span.start {
                push(&mut stack, &self.atoms[next_atom]);
                next_atom += 1;
            }
            let mut i = next_atom;
            while i < self.atoms.len()
                && self.atoms[i].span.start < span.end
                && !self.atoms[i].is_content()
            {
                push(&mut stack, &self.atoms[i]);
                i += 1;
            }
            next_atom = i;
            paths.push(stack.iter().map(|(_, t)| t.clone()).collect());
        }
        paths
    }
}

/// Candidate cut positions inside one section, by preference.
struct CutPoints {
    /// Markdown block starts: headings, fences, and lines after a blank line,
    /// a heading, or a code block.
    block: Vec<usize>,
    /// Every line start outside code blocks.
    line: Vec<usize>,
    /// Word starts inside text and heading lines.
    word: Vec<usize>,
    /// Any char boundary inside text and heading lines.
    char: Vec<usize>,
}

impl CutPoints {
    fn collect(layout: &Layout<'_>, first: usize, last: usize) -> Self {
        let mut cuts = CutPoints {
            block: Vec::new(),
            line: Vec::new(),
            word: Vec::new(),
            char: Vec::new(),
        };
        for i in first..last {
            let atom = layout.atoms[i];
            if i > first {
                cuts.line.push(atom.span.start);
                let prev = layout.atoms[i - 1].kind;
                let block_start = atom.kind != AtomKind::Blank
                    && (matches!(atom.kind, AtomKind::Heading(_) | AtomKind::Code)
                        || matches!(
                            prev,
                            AtomKind::Blank | AtomKind::Heading(_) | AtomKind::Code
                        ));
                if block_start {
                    cuts.block.push(atom.span.start);
                }
            }
            if matches!(atom.kind, AtomKind::Text | AtomKind::Heading(_)) {
                let line = &layout.text[atom.span.start..atom.span.end];
                let mut prev_ws = false;
                for (off, ch) in line.char_indices() {
                    let p = atom.span.start + off;
                    if off > 0 {
                        cuts.char.push(p);
                        if prev_ws && !ch.is_whitespace() {
                            cuts.word.push(p);
                        }
                    }
                    prev_ws = ch.is_whitespace();
                }
            }
        }
        cuts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(content: &str) -> Document {
        Document::new("doc.md", content, "p")
    }

    fn split(content: &str, max: usize) -> Vec<Chunk> {
        let cfg = SplitterConfig {
            max_chunk_chars: max,
            ..Default::default()
        };
        split_document(&doc(content), &cfg).unwrap()
    }

    #[test]
    fn splits_at_h2() {
        let chunks = split("# T\n## A\np1\n## B\np2", 1500);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].heading_path, ["T", "A"]);
        assert_eq!(chunks[1].heading_path, ["T", "B"]);
        assert_eq!(chunks[0].content, "# T\n## A\np1");
        assert_eq!(chunks[1].content, "## B\np2");
    }

    #[test]
    fn oversize_code_block_is_one_chunk() {
        let body: String = (0..250)
            .map(|i| format!("line_{i:04}_xxxxxxxxxxx\n"))
            .collect();
        let content = format!("## Big\n```\n{body}```\n");
        let chunks = split(&content, 1500);
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].content.chars().count() >= 5000);
        assert_eq!(chunks[0].heading_path, ["Big"]);
    }

    #[test]
    fn no_headings_single_chunk() {
        let chunks = split("just a paragraph\n\nand another", 1500);
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].heading_path.is_empty());
    }

    #[test]
    fn empty_document_rejected() {
        let err = split_document(&doc("  \n\n"), &SplitterConfig::default()).unwrap_err();
        assert_eq!(err, SplitError::EmptyDocument("doc.md".into()));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SplitterConfig {
            max_chunk_chars: 99,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.max_chunk_chars = 100;
        cfg.split_heading_levels.insert(7);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overflow_packs_paragraphs() {
        let para = "word ".repeat(20); // 100 chars
        let content = format!("## S\n{p}\n\n{p}\n\n{p}\n\n{p}\n", p = para.trim_end());
        let chunks = split(&content, 250);
        assert!(chunks.len() >= 2);
        for c in &chunks {
            assert!(c.content.chars().count() <= 250, "{:?}", c.content);
            assert_eq!(c.heading_path, ["S"]);
        }
        // Paragraph boundaries only: no chunk starts mid-paragraph.
        for c in &chunks[1..] {
            assert!(c.content.starts_with("word"));
            let before = &content[..c.char_span.start];
            assert!(before.ends_with("\n\n") || before.ends_with("\n"));
        }
    }

    #[test]
    fn long_single_line_falls_back_to_words() {
        let content = "x ".repeat(400);
        let chunks = split(&content, 150);
        assert!(chunks.len() > 1);
        assert!(chunks.iter().all(|c| c.content.chars().count() <= 150));
    }

    #[test]
    fn heading_inside_code_is_not_a_boundary() {
        let chunks = split("## A\n```\n## not a heading\n```\n## B\ntext", 1500);
        assert_eq!(chunks.len(), 2);
        assert!(chunks[0].content.contains("## not a heading"));
    }

    #[test]
    fn spans_tile_document() {
        let content = "\n\n# T\n\nintro\n\n## A\n\nbody\n\n### A1\n\nmore\n\n";
        let chunks = split(content, 1500);
        assert_eq!(chunks[0].char_span.start, 0);
        assert_eq!(chunks.last().unwrap().char_span.end, content.len());
        for w in chunks.windows(2) {
            assert_eq!(w[0].char_span.end, w[1].char_span.start);
        }
        assert_eq!(chunks[2].heading_path, ["T", "A", "A1"]);
    }

    #[test]
    fn inherits_partition_and_metadata() {
        let raw = "---\ndoc_type: official\npartition: team\n---\n## A\nbody\n";
        let d = document_from_markdown("a.md", raw, "default");
        assert_eq!(d.partition_key, "team");
        assert!(!d.content.contains("doc_type"));
        let chunks = split_document(&d, &SplitterConfig::default()).unwrap();
        assert!(chunks
            .iter()
            .all(|c| c.partition_key == "team" && c.metadata["doc_type"] == "official"));
    }

    #[test]
    fn chunk_ids_are_deterministic() {
        let a = split("## A\nx\n## B\ny", 1500);
        let b = split("## A\nx\n## B\ny", 1500);
        assert_eq!(a, b);
        assert_ne!(a[0].id, a[1].id);
    }
}
