//! Cluster-triggered spike encoding.
//!
//! Static images go through Otsu binarization, a connected-component prior and
//! a 4x4 local-density trigger before being written as time-to-first-spike or
//! burst spike trains ([`encode2d`]). Event streams are voxelized and gated by
//! spatio-temporal box density ([`encode3d`]). [`snn`] holds a small
//! surrogate-gradient classifier used to check encodings end to end.

pub mod encode2d;
pub mod encode3d;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod snn;
pub mod types;

pub use error::{CteError, Result};
