#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::splitter::parse_front_matter;

fuzz_target!(|data: &str| {
    let fm = parse_front_matter(data);
    assert!(fm.body_offset <= data.len());
    assert!(data.is_char_boundary(fm.body_offset));
    if fm.body_offset == 0 {
        assert!(fm.metadata.is_empty());
    }
});
