#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::eval::{parse_dataset, EvalSample};

fuzz_target!(|data: &str| {
    if let Ok(s) = EvalSample::parse(data) {
        assert!(!s.id.trim().is_empty());
        assert!(!s.query.trim().is_empty());
    }
    if let Ok((samples, skipped)) = parse_dataset(data) {
        assert!(!samples.is_empty());
        assert!(skipped < samples.len() + skipped);
    }
});
