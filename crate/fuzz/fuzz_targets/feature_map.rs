//! Feature-map decoder: no panics on garbage, stable re-encoding.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::aggregation::{read_feature_map, write_feature_map};

fuzz_target!(|data: &[u8]| {
    let Ok(map) = read_feature_map(data) else {
        return;
    };
    let first = write_feature_map(&map);
    let again = read_feature_map(&first).expect("encoded feature map must decode");
    assert_eq!(first, write_feature_map(&again));
});
