//! File formats: GeoJSON ingestion, mapping tables, dataset files and
//! synthetic towns.

mod dataset;
mod geojson;
mod mapping;
mod synth;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use geojson::{
    check_metric_crs, ingest_footprints, normalize_crs, polygon_geometry, write_feature_collection, IngestConfig,
    IngestOutput, Rejection,
};
pub use mapping::{LandUseSource, MappingTables, TagClass, DEFAULT_LAND_USE_TABLE, DEFAULT_TAG_TABLE};
pub use synth::{synth_town, SynthParams, SynthTown, SYNTH_CRS};

#[cfg(test)]
mod tests;
