//! Versioned prompt catalog and the section format shared by all prompts.
//!
//! User prompts are made of sections introduced by a header line such as
//! `--- question ---` or `--- context 2 source=abc ---`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_CATALOG: &str = include_str!("../prompts/catalog.toml");

/// Reply the answer prompt asks for when the context is empty or insufficient.
pub const REFUSAL: &str = "I cannot answer this from the provided context.";

pub const REQUIRED_PROMPTS: &[&str] = &[
    "route",
    "rewrite",
    "decompose",
    "hyde",
    "evaluate",
    "answer",
    "judge",
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt catalog parse error: {0}")]
    Parse(String),
    #[error("prompt catalog is missing entry {0:?}")]
    Missing(String),
    #[error("prompt catalog io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptCatalog {
    pub version: String,
    pub prompts: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled prompt catalog is valid")
    }
}

impl PromptCatalog {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let cat: PromptCatalog =
            toml::from_str(text).map_err(|e| PromptError::Parse(e.to_string()))?;
        for key in REQUIRED_PROMPTS {
            if !cat.prompts.contains_key(*key) {
                return Err(PromptError::Missing((*key).to_owned()));
            }
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Render `(system, user)` for a prompt, substituting `{name}` placeholders.
    ///
    /// Substitution is single pass: braces inside substituted values are left
    /// alone. Unknown keys panic only if the catalog was never validated.
    pub fn render(&self, key: &str, vars: &[(&str, &str)]) -> (String, String) {
        let t = self
            .prompts
            .get(key)
            .unwrap_or_else(|| panic!("prompt {key:?} missing from validated catalog"));
        (fill(&t.system, vars), fill(&t.user, vars))
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let var = after.find('}').and_then(|close| {
            vars.iter()
                .find(|(k, _)| *k == &after[..close])
                .map(|v| (close, v.1))
        });
        match var {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// The directive named on a system prompt's `@directive` line.
pub fn directive(system: &str) -> Option<&str> {
    system
        .lines()
        .find_map(|l| l.trim().strip_prefix("@directive "))
        .map(str::trim)
}

/// One `--- name [attrs] ---` section of a user prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section<'a> {
    pub name: &'a str,
    pub attrs: &'a str,
    pub body: &'a str,
}

fn parse_header(line: &str) -> Option<(&str, &str)> {
    let inner = line.trim_end().strip_prefix("--- ")?.strip_suffix(" ---")?;
    let (name, attrs) = inner.split_once(' ').unwrap_or((inner, ""));
    (!name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase())).then_some((name, attrs))
}

pub fn sections(prompt: &str) -> Vec<Section<'_>> {
    let mut out = Vec::new();
    let mut current: Option<(&str, &str, usize)> = None;
    let mut pos = 0;
    for line in prompt.split_inclusive('\n') {
        if let Some((name, attrs)) = parse_header(line) {
            if let Some((n, a, start)) = current.take() {
                out.push(Section {
                    name: n,
                    attrs: a,
                    body: prompt[start..pos].trim_end_matches('\n'),
                });
            }
            current = Some((name, attrs, pos + line.len()));
        }
        pos += line.len();
    }
    if let Some((n, a, start)) = current {
        out.push(Section {
            name: n,
            attrs: a,
            body: prompt[start..].trim_end_matches('\n'),
        });
    }
    out
}

/// Context block as it appears in answer and judge prompts.
pub fn context_block(kind: &str, n: usize, source: &str, text: &str) -> String {
    format!("--- {kind} {n} source={source} ---\n{}\n", text.trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_is_complete() {
        let cat = PromptCatalog::default();
        for key in REQUIRED_PROMPTS {
            let (system, _) = cat.render(key, &[]);
            assert_eq!(directive(&system), Some(*key));
        }
    }

    #[test]
    fn missing_entry_rejected() {
        let err = PromptCatalog::parse(
            "version = \"1\"\n[prompts.route]\nsystem = \"s\"\nuser = \"u\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::Missing(_)));
    }

    #[test]
    fn single_pass_fill() {
        assert_eq!(fill("a {query} b {x}", &[("query", "{x}")]), "a {x} b {x}");
        assert_eq!(fill("{unclosed", &[("unclosed", "v")]), "{unclosed");
    }

    #[test]
    fn parses_sections() {
        let cat = PromptCatalog::default();
        let ctx = context_block("context", 1, "abc", "line one\nline two");
        let (_, user) = cat.render("answer", &[("context", &ctx), ("query", "why?")]);
        let s = sections(&user);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].name, "context");
        assert_eq!(s[0].attrs, "1 source=abc");
        assert_eq!(s[0].body, "line one\nline two");
        assert_eq!(s[1].name, "question");
        assert_eq!(s[1].body, "why?");
    }
}
