//! Multi-task Gaussian process regression with the linear model of
//! coregionalization (LMC) and a neural embedding of the latent mixture.
//!
//! The numeric core is generic over [`Real`] (`f32`/`f64`); the aliases at
//! the crate root fix it to `f64`, which is what training and the command
//! line use.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod elbo;
pub mod error;
pub mod experiment;
pub mod forecast;
pub mod gp_exact;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod numerics;
pub mod params;
pub mod pod;
pub mod predict;
pub mod scalar;
pub mod sparse;
pub mod splits;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

/// Double-precision dense matrix.
pub type Matrix = numerics::DenseMatrix<f64>;
/// Double-precision kernel hyperparameters.
pub type Kernel = kernels::KernelParams<f64>;
/// Double-precision model state.
pub type Model = model::ModelState<f64>;
/// Double-precision multi-task dataset.
pub type Dataset = data::MultiTaskDataset<f64>;
