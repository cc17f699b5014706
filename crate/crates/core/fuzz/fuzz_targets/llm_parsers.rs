#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::post_retrieval::parse_score;
use ragway_core::pre_retrieval::{parse_route, parse_sub_queries};
use ragway_core::prompts::{directive, sections};

fuzz_target!(|data: &str| {
    let s = parse_score(data);
    assert!((0.0..=1.0).contains(&s));
    let _ = parse_route(data);
    let subs = parse_sub_queries(data, 4);
    assert!(subs.len() <= 4);
    assert!(subs.iter().all(|q| !q.trim().is_empty()));
    let _ = directive(data);
    for sec in sections(data) {
        assert!(!sec.name.is_empty());
    }
});
