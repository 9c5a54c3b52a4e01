//! Monocular 3D centroid reasoning from 2D boxes: depth from a class height
//! prior, grid proposals, object-aware voting, training losses with
//! gradients, offset-model fitting and KITTI-style evaluation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod centroid;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod geometry;
pub mod kitti_io;
pub mod losses;
pub mod pipeline;
pub mod synth;
pub mod voting;

pub use error::{Error, Result};
