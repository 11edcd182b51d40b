//! LiDAR-aided perspective transform: project LiDAR returns into camera
//! views for sparse depth, lift multi-scale image features into a
//! vehicle-centered bird's-eye-view grid, fuse scales and modalities, and
//! evaluate the resulting semantic grids. A built-in analytic scene
//! simulator provides exact oracles for every geometric stage.

pub mod bev;
pub mod depth;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
