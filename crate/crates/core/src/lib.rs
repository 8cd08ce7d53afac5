//! Unsupervised spectral shape matching with coupled functional and
//! point-wise maps.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod autodiff;
pub mod cache;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod fmap;
pub mod linalg;
pub mod losses;
pub mod mesh;
pub mod pipeline;
pub mod pointwise;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh = mesh::TriangleMesh<f64>;
pub type Laplacian = mesh::LaplacianPair<f64>;
pub type Basis = spectral::SpectralBasis<f64>;
pub type DenseMatrix = linalg::Matrix<f64>;
pub type Net = autodiff::FeatureNet<f64>;
pub type MeshShape = pipeline::Shape<f64>;
pub type Pair<'a> = pipeline::ShapePair<'a, f64>;
