//! Point cloud upsampling with parallel local and global encoders.
//!
//! The crate bundles the geometry kernels, a small reverse-mode tape, the
//! three network variants, evaluation metrics, gradient saliency and the
//! experiment harness behind the `relpu` binary.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod model;
pub mod saliency;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud};
