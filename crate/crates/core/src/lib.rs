//! Binary restricted Boltzmann machines with a signed-graph Laplacian
//! regularizer on the hidden layer.
//!
//! - [`graph`]: signed label graphs, kNN graphs, Laplacians and the
//!   smoothness regularizer
//! - [`model`]: parameters, energies, conditionals and sampling
//! - [`oracle`]: exhaustive enumeration of tiny models, used as ground truth
//! - [`trainer`]: minibatch CD-k training
//! - [`data`]: IDX ingestion, binarization, subsets and checkpoints
//! - [`eval`]: hidden-code encoding, nearest-neighbour classification and
//!   CSV export
//! - [`verify`]: randomized suites comparing closed forms against the oracle

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod trainer;
pub mod verify;

/// Class identifier.
pub type Label = u8;

pub use data::{Checkpoint, Dataset};
pub use error::{Error, Result};
pub use eval::{EncodeMode, Representations};
pub use graph::{Adjacency, DegreeConvention, SignedGraph};
pub use model::{BatchState, DeltaSource, Gradient, RbmParams};
pub use trainer::{ModelKind, TrainConfig, TrainReport};
