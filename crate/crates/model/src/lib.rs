//! Building classifiers: graph neural networks on localized subgraphs, a
//! fully connected baseline, and tree ensembles.
//!
//! Neural models run on a small reverse-mode differentiation tape
//! ([`tape`]). A batch of subgraphs is collated into blocks ([`batch`]) so
//! that each GNN layer only computes rows that reach the target nodes.

pub mod batch;
pub mod checkpoint;
pub mod cv;
pub mod error;
pub mod importance;
pub mod layers;
pub mod model;
pub mod optim;
pub mod spec;
pub mod tape;
pub mod train;
pub mod tree;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cv::{cross_validate, CvResult, CvRun};
pub use error::{Error, Result};
pub use importance::{permutation_importance, ImportanceReport};
pub use model::{Classifier, EvalScope, Predictions, TrainedModel};
pub use spec::{Architecture, ModelSpec};
pub use train::{train, train_with_progress, EpochRecord, TrainReport};
