//! Slope scenes stored as Gaussian splats, turned into granular landslide
//! simulations and rendered back to frames.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anisotropy;
pub mod fill;
pub mod geo;
pub mod mpm;
pub mod ply;
pub mod render;
pub mod scene;
pub mod spatial;

pub use scene::{CoordinateFrame, Gaussian, Scene};
