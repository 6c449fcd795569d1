//! Datasets on disk, batch assembly and the procedural toy domain.

mod batch;
mod manifest;
mod toy;

pub use batch::{make_batch, Batch, BatchStream};
pub use manifest::{
    ingest, BaseToMeta, Dataset, DatasetManifest, IngestOptions, Sample, SampleEntry, Split, Splits,
    BACKGROUND_NAME, MANIFEST_FILE,
};
pub use toy::{
    generate_toy_dataset, toy_id, toy_sample, Appearance, Texture, ToyGeometry, ToyRanges, ToySample,
    BACKGROUND_RGB, TOY_RANGES,
};
