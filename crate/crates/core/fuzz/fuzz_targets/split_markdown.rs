#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::splitter::{
    detect_code_blocks, document_from_markdown, split_document, SplitterConfig,
};

fuzz_target!(|data: &str| {
    let doc = document_from_markdown("fuzz.md", data, "default");
    let cfg = SplitterConfig {
        max_chunk_chars: 100,
        ..SplitterConfig::default()
    };
    let Ok(chunks) = split_document(&doc, &cfg) else {
        return;
    };
    let text = doc.content.as_str();
    assert_eq!(chunks.first().unwrap().char_span.start, 0);
    assert_eq!(chunks.last().unwrap().char_span.end, text.len());
    for w in chunks.windows(2) {
        assert_eq!(w[0].char_span.end, w[1].char_span.start);
    }
    let code = detect_code_blocks(text);
    for c in &chunks {
        assert!(!c.content.trim().is_empty());
        assert_eq!(c.partition_key, doc.partition_key);
        for s in &code {
            let straddles = s.start < c.char_span.start && c.char_span.start < s.end;
            assert!(!straddles, "chunk starts inside a code block");
        }
    }
});
