//! Pose-graph text parser: arbitrary input must never panic, and anything
//! that parses must survive a serialize -> parse -> serialize fixpoint.
#![no_main]

use libfuzzer_sys::fuzz_target;
use vsyn_core::viewgraph::{parse_pose_graph, serialize_pose_graph};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(graph) = parse_pose_graph(text) else {
        return;
    };
    let first = serialize_pose_graph(&graph);
    let reparsed = parse_pose_graph(&first).expect("serialized graph must reparse");
    let second = serialize_pose_graph(&reparsed);
    assert_eq!(first, second, "serialization is not a fixpoint");
});
