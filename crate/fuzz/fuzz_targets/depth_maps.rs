//! Binary depth, confidence, and provenance decoders: no panics on garbage,
//! and every accepted payload re-encodes to a stable byte string.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::fusion::{
    read_confidence_map, read_depth_map, read_provenance_mask, write_confidence_map,
    write_depth_map, write_provenance_mask,
};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = read_depth_map(data) {
        let first = write_depth_map(&map);
        let again = read_depth_map(&first).expect("encoded depth map must decode");
        assert_eq!(first, write_depth_map(&again));
    }
    if let Ok(map) = read_confidence_map(data) {
        let first = write_confidence_map(&map);
        let again = read_confidence_map(&first).expect("encoded confidence must decode");
        assert_eq!(first, write_confidence_map(&again));
    }
    if let Ok(mask) = read_provenance_mask(data) {
        let first = write_provenance_mask(&mask);
        let again = read_provenance_mask(&first).expect("encoded mask must decode");
        assert_eq!(first, write_provenance_mask(&again));
    }
});
