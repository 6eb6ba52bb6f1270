//! Camera text parser: no panics, and parsed cameras serialize to a
//! fixpoint.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::aggregation::{parse_camera_file, serialize_camera_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cams) = parse_camera_file(text) else {
        return;
    };
    let first = serialize_camera_file(&cams);
    let reparsed = parse_camera_file(&first).expect("serialized cameras must reparse");
    assert_eq!(first, serialize_camera_file(&reparsed));
});
