//! Text-free core of a Jacobian-field mesh deformation engine.
//!
//! A source triangle mesh is deformed by optimizing one 3×3 matrix per face.
//! The matrices are turned into vertex positions by an area-weighted Poisson
//! solve ([`fieldgrad`]), rendered from sampled cameras by a software
//! rasterizer with reverse-mode gradients ([`raster`]), scored by a pluggable
//! [`guidance`] provider, and updated with Adam ([`optim`]).
//!
//! Gradients flow pixels → vertices → Jacobians; the last hop is the adjoint of
//! the Poisson solve, which reuses the cached factorization of the cotangent
//! Laplacian.

pub mod error;
pub mod fieldgrad;
pub mod guidance;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod shapes;
pub mod sparse;
pub mod checkgrad;
mod par;

pub use error::{Error, Result};
pub use fieldgrad::{JacobianField, PoissonSystem};
pub use mesh::{FaceGeometry, Mesh};

pub use nalgebra::{Matrix3, Vector3};

/// Per-vertex positions, one row per vertex.
pub type Vertices = Vec<Vector3<f64>>;
