//! Building type and function classification from footprint geometry and
//! spatial context.
//!
//! The crate covers the data side of the pipeline:
//!
//! - [`geom`]: shape indicators over footprint polygons
//! - [`feature`]: 69-dimensional node features, blocks and normalization
//! - [`graphgen`]: localized subgraph generation, Delaunay edges, splits
//! - [`eval`]: accuracy, Cohen's kappa, F1 and breakdown tables
//! - [`io`]: GeoJSON ingestion, mapping tables, dataset files, synthetic towns
//!
//! Models and training live in the `bldclass-model` crate.

pub mod classes;
pub mod error;
pub mod eval;
pub mod feature;
pub mod geom;
pub mod graphgen;
pub mod io;

pub use error::{Error, Result};
