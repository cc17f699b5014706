use crate::types::Metadata;

/// Result of peeling a `---` delimited key/value block off a Markdown file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrontMatter {
    pub metadata: Metadata,
    /// Byte offset where the body starts. Zero when there is no front matter.
    pub body_offset: usize,
}

/// Parse an optional YAML-style front matter block.
///
/// Only flat `key: value` lines are understood; anything else inside the
/// block is ignored. A block without a closing `---` is not front matter.
pub fn parse_front_matter(raw: &str) -> FrontMatter {
    let mut lines = raw.split_inclusive('\n');
    let Some(first) = lines.next() else {
        return FrontMatter::default();
    };
    if first.trim_end() != "---" {
        return FrontMatter::default();
    }
    let mut pos = first.len();
    let mut metadata = Metadata::new();
    for line in lines {
        pos += line.len();
        let trimmed = line.trim();
        if trimmed == "---" || trimmed == "..." {
            return FrontMatter {
                metadata,
                body_offset: pos,
            };
        }
        if trimmed.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = trimmed.split_once(':') {
            let key = key.trim();
            if !key.is_empty() {
                metadata.insert(key.to_owned(), unquote(value.trim()).to_owned());
            }
        }
    }
    FrontMatter::default()
}

fn unquote(v: &str) -> &str {
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_block() {
        let raw = "---\ndoc_type: official\nversion: \"2.0\"\n# comment\npartition: team-a\n---\n# Body\n";
        let fm = parse_front_matter(raw);
        assert_eq!(fm.metadata["doc_type"], "official");
        assert_eq!(fm.metadata["version"], "2.0");
        assert_eq!(fm.metadata["partition"], "team-a");
        assert_eq!(&raw[fm.body_offset..], "# Body\n");
    }

    #[test]
    fn unclosed_block_is_body() {
        let fm = parse_front_matter("---\nkey: v\nno end");
        assert_eq!(fm, FrontMatter::default());
    }

    #[test]
    fn no_block() {
        assert_eq!(parse_front_matter("# Title\n---\n"), FrontMatter::default());
        assert_eq!(parse_front_matter(""), FrontMatter::default());
    }
}
