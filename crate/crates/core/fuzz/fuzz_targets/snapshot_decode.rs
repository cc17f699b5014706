#![no_main]

use libfuzzer_sys::fuzz_target;
use ragway_core::retrieval::HybridIndex;

fuzz_target!(|data: &[u8]| {
    let Ok(index) = HybridIndex::from_snapshot_bytes(data) else {
        return;
    };
    let mut first = Vec::new();
    index.write_snapshot(&mut first).unwrap();
    let again = HybridIndex::from_snapshot_bytes(&first).expect("re-encoded snapshot decodes");
    let mut second = Vec::new();
    again.write_snapshot(&mut second).unwrap();
    assert_eq!(first, second);
});
