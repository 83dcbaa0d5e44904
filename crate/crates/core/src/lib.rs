//! Calibrated photometric stereo toolkit.
//!
//! * [`tensor`]: dense tensors with reverse-mode differentiation.
//! * [`msnet`]: the coarse-to-fine normal-estimation network and its trainer.
//! * [`geomgen`]: blobby implicit surfaces, marching cubes, OBJ loading.
//! * [`render`]: direct-lighting renderer producing training samples.
//! * [`classic`]: least-squares Lambertian baseline.
//! * [`dataio`]: PFM/PGM/JSON sample persistence and DiLiGenT import.
//! * [`evalkit`]: angular error metrics and benchmark tables.
//! * `cli`: the `multips` command line (feature `cli`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classic;
#[cfg(feature = "cli")]
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod geomgen;
pub mod msnet;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};
