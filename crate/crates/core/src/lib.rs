//! Online low-rank maintenance of exponentially averaged K-Factor matrices
//! and their regularized inverses.
//!
//! The crate keeps a thin eigendecomposition of a streaming Gram-matrix
//! average in sync with the exact matrix using symmetric online SVD updates,
//! periodic randomized sketches, and cheap subspace corrections, and measures
//! how well the maintained inverses track the exact ones.

pub mod brand;
pub mod error;
pub mod error_analysis;
pub mod linalg;
pub mod maintainers;
pub mod stream;

pub use error::{KfoError, Result};
