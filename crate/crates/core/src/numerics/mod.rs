//! Dense linear algebra, sampling, and differentiation oracles.

pub mod cholesky;
pub mod fdiff;
pub mod gaussian;
pub mod matrix;
pub mod sampling;

pub use cholesky::{cholesky_with_jitter, CholeskyFactor, DEFAULT_JITTER};
pub use fdiff::{finite_diff_grad, finite_diff_partial};
pub use gaussian::{gaussian_logpdf, normal_logpdf};
pub use matrix::DenseMatrix;
pub use sampling::{reparam_sample, RngStream};
