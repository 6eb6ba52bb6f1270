//! Parameter-blob decoder: no panics on garbage, and accepted blobs
//! re-encode byte for byte.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::mpnn::{read_params, write_params};

fuzz_target!(|data: &[u8]| {
    let Ok(params) = read_params(data) else {
        return;
    };
    let first = write_params(&params);
    let again = read_params(&first).expect("encoded parameters must decode");
    assert_eq!(first, write_params(&again));
});
