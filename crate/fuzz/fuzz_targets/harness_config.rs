//! Key-value config parser: no panics, and accepted configs serialize to a
//! fixpoint.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::harness::{parse_config, serialize_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = parse_config(text) else {
        return;
    };
    let first = serialize_config(&cfg);
    let reparsed = parse_config(&first).expect("serialized config must reparse");
    assert_eq!(first, serialize_config(&reparsed));
});
