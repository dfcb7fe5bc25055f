//! Spectral-spatial feature fusion (CSFF) for hyperspectral image classification.
//!
//! The pipeline trains two networks on training pixels only:
//!
//! - [`annc`]: a four-layer fully connected network supervised jointly by
//!   softmax and center loss; its third hidden layer yields spectral features.
//! - [`discriminant`]: a small CNN that scores whether the two rows of a
//!   `(2, L)` pixel pair belong to the same class.
//!
//! At test time [`fusion`] scores each test pixel against its neighborhood,
//! thresholds and normalizes the resulting spatial matrix into a kernel, and
//! averages neighboring spectral features under that kernel. [`classify`]
//! then assigns labels with a nearest-center or kNN rule and scores them.
//!
//! [`ingest`] covers file formats, normalization, splitting and synthetic
//! scenes; [`experiment`] wires everything into a config-driven harness.

pub mod annc;
pub mod classify;
pub mod discriminant;
mod error;
pub mod experiment;
pub mod field;
pub mod fusion;
pub mod ingest;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
