#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::prompts::{PromptCatalog, REQUIRED_PROMPTS};

fuzz_target!(|data: &str| {
    let Ok(cat) = PromptCatalog::parse(data) else {
        return;
    };
    for key in REQUIRED_PROMPTS {
        let _ = cat.render(
            key,
            &[("query", "{query}"), ("context", "x"), ("answer", "y")],
        );
    }
});
