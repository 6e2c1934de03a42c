//! Synthetic parametric shapes with exact surfaces, and the patch / average
//! segment training corpus built from them.

mod dataset;
mod shapes;

pub use dataset::{
    build_dataset, corpus_specs, derive_seed, load_dataset, write_dataset, Dataset, DatasetConfig, Manifest,
    NormalizedSurface, ShapeData, ShapeRecord, Split, Subsample, TrainingSample, MANIFEST_FORMAT,
};
pub(crate) use dataset::hex_digest;
pub use shapes::{sample_surface, Pose, ShapeKind, ShapeSpec};
