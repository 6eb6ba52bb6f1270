//! Geometric and optimization core for multi-view synthesis pipelines.
//!
//! The crate covers the pose-and-depth side of an image-based rendering
//! system: rotation algebra on SO(3), view-graph construction and outlier
//! filtering, robust rotation averaging, a small message-passing pose
//! refiner trained with hand-written gradients, multi-view/monocular depth
//! fusion, and view-dependent feature aggregation with forward warping.
//!
//! Everything is deterministic: generators take explicit seeds, solvers
//! iterate in fixed orders, and no code path uses threads or hash-order
//! iteration. Running the same inputs twice produces identical bytes.

pub mod aggregation;
pub mod averaging;
pub mod fusion;
pub mod harness;
pub mod mpnn;
pub mod so3;
pub mod viewgraph;
