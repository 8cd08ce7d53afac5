//! Dense and sparse linear algebra used throughout the crate.

pub mod cholesky;
pub mod dense;
pub mod eigen;
pub mod skyline;
pub mod sparse;

pub use cholesky::DenseCholesky;
pub use dense::Matrix;
pub use eigen::{symmetric_eigen, tridiagonal_eigen, SymmetricEigen};
pub use skyline::SkylineCholesky;
pub use sparse::CsrMatrix;
