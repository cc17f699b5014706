use crate::types::Span;

/// Byte range of a fenced code block, fence lines included.
///
/// `end` excludes the newline that terminates the closing fence. An unclosed
/// fence runs to the end of the input.
pub type CodeSpan = Span;

/// Opening fence: a line starting with three or more backticks whose info
/// string contains no further backtick. Closing fence: a line starting with
/// at least as many backticks and nothing but whitespace after them.
pub fn detect_code_blocks(markdown: &str) -> Vec<CodeSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let mut pos = 0;

    for line in markdown.split_inclusive('\n') {
        let line_start = pos;
        pos += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let ticks = body.bytes().take_while(|b| *b == b'`').count();
        match open {
            None => {
                if ticks >= 3 && !body[ticks..].contains('`') {
                    open = Some((line_start, ticks));
                }
            }
            Some((start, fence)) => {
                if ticks >= fence && body[ticks..].trim().is_empty() {
                    spans.push(Span::new(start, line_start + body.len()));
                    open = None;
                }
            }
        }
    }
    if let Some((start, _)) = open {
        spans.push(Span::new(start, markdown.len()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_block() {
        let md = "a\n```\nx\n```\nb";
        let spans = detect_code_blocks(md);
        assert_eq!(spans, vec![Span::new(2, 11)]);
        assert_eq!(&md[2..11], "```\nx\n```");
    }

    #[test]
    fn no_fences() {
        assert!(detect_code_blocks("no code here").is_empty());
    }

    #[test]
    fn unclosed_runs_to_end() {
        let md = "```go\nf()\n";
        assert_eq!(detect_code_blocks(md), vec![Span::new(0, md.len())]);
    }

    #[test]
    fn info_string_line_does_not_close() {
        let md = "```\n```rust\n```\nafter";
        assert_eq!(detect_code_blocks(md), vec![Span::new(0, 15)]);
    }

    #[test]
    fn longer_fence_needs_longer_close() {
        let md = "````md\n```\ninner\n```\n````\n";
        assert_eq!(detect_code_blocks(md), vec![Span::new(0, 25)]);
    }

    #[test]
    fn multiple_blocks_sorted_and_disjoint() {
        let md = "```\na\n```\ntext\n```py\nb\n```\n";
        let spans = detect_code_blocks(md);
        assert_eq!(spans.len(), 2);
        assert!(spans[0].end <= spans[1].start);
    }

    #[test]
    fn crlf_line_endings() {
        let md = "x\r\n```\r\ny\r\n```\r\nz";
        let spans = detect_code_blocks(md);
        assert_eq!(&md[spans[0].start..spans[0].end], "```\r\ny\r\n```");
    }
}
