//! Table structure recognition from extracted cell boxes.
//!
//! The pipeline builds a K-nearest-neighbour graph over table cells, labels
//! every candidate edge as a vertical adjacency, a horizontal adjacency or no
//! relation with a bipartite graph-attention network, recovers logical
//! row/column spans from the labeled graph and scores the result by
//! adjacency-relation precision and recall.
//!
//! Modules, in pipeline order:
//!
//! - [`ingest`]: chunk and structure files, chunk-to-truth cell matching
//! - [`graph`]: KNN candidate edges, geometric features, edge labels
//! - [`model`]: the attention network, loss, Adam and checkpoints
//! - [`recovery`]: labeled graph to row/column spans
//! - [`metrics`]: adjacency-relation precision/recall/F1
//! - [`synth`]: seeded synthetic tables for training and testing
//! - [`pipeline`] and [`cli`]: end-to-end wiring used by the binary

pub mod cli;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{BBox, Cell, Relation, RelationLabel, RelationSet, StructuredCell, TableStructure};
