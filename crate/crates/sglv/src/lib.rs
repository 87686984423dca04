//! Spherical-Gaussian lighting volume toolkit.
//!
//! Builds lighting volumes from RGBD inputs, renders spatially consistent
//! HDR environment maps by differentiable volume ray tracing, shades glossy
//! probes with Monte-Carlo microfacet sampling, blends in detailed visible
//! reflections from a partial depth mesh, accumulates lighting across video
//! frames, and fits volume parameters to target environment maps by
//! gradient descent.

pub mod camera;
pub mod equirect;
pub mod error;
pub mod fit;
pub mod grid;
pub mod image;
pub mod io;
pub mod math;
pub mod panorama;
pub mod raytrace;
pub mod scenegen;
pub mod shading;
pub mod temporal;
pub mod volume;

pub use error::{Error, Result};
