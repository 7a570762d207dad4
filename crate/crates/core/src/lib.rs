//! Batched k-nearest-neighbour queries over moving objects.
//!
//! Each tick, the latest object positions are indexed on a PR-quadtree grid
//! whose leaves are addressed by Morton codes, and every query is answered
//! by an iterative, data-parallel tree visit that walks the leaf order to
//! the left and to the right of the query's own leaf.
//!
//! * [`geometry`]: Morton codes, quadrant bounds and distances.
//! * [`quadindex`]: grid construction, `z_map`, object indexing.
//! * [`kselect`]: bucket-based k-selection.
//! * [`engine`]: the tick processor.
//! * [`workload`]: synthetic moving-object generators.
//! * [`oracle`]: brute-force reference and result comparison.

pub mod engine;
pub mod geometry;
pub mod kselect;
pub mod oracle;
pub mod quadindex;
pub mod workload;

/// Identifier of a moving object.
pub type ObjectId = u64;

pub use engine::{Engine, EngineConfig, Neighbour, Query, QueryNeighbours, TickOutput, TickResult};
pub use geometry::{MortonCell, Point, Rect};
pub use quadindex::QuadIndex;
