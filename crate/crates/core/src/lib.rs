//! Raster-to-SVG vectorization by superpixel decomposition and differentiable
//! fitting of closed cubic-Bézier fill paths.

pub mod dpw;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod optimize;
pub mod raster;
pub mod scenes;
pub mod superpixel;
pub mod svgio;

pub use error::{Error, Result};
