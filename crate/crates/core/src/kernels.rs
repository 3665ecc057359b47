//! Squared-exponential kernel with automatic relevance determination.

use crate::autodiff::se_ard_matrix;
use crate::error::{dim_err, Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Default initial length-scale for the small benchmark cases.
pub const DEFAULT_LENGTH_SCALE: f64 = 0.1;
/// Initial length-scale used for the robot-arm cases.
pub const SARCOS_LENGTH_SCALE: f64 = 0.5;
pub const DEFAULT_OUTPUT_SCALE_SQ: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    /// σ_f²
    pub output_scale_sq: T,
    /// One length-scale per input dimension.
    pub length_scales: Vec<T>,
}

impl<T: Real> KernelParams<T> {
    pub fn new(output_scale_sq: T, length_scales: Vec<T>) -> Result<Self> {
        if !(output_scale_sq > T::zero()) || length_scales.iter().any(|&l| !(l > T::zero())) {
            return Err(Error::InvalidSpec("kernel parameters must be strictly positive".into()));
        }
        Ok(Self { output_scale_sq, length_scales })
    }

    /// Isotropic initialization: σ_f² and the same length-scale in every dimension.
    pub fn isotropic(dim: usize, output_scale_sq: T, length_scale: T) -> Self {
        Self { output_scale_sq, length_scales: vec![length_scale; dim] }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn log_output_scale_sq(&self) -> T {
        self.output_scale_sq.ln()
    }

    pub fn log_length_scales(&self) -> Vec<T> {
        self.length_scales.iter().map(|l| l.ln()).collect()
    }

    pub fn from_log(log_sf2: T, log_ls: &[T]) -> Self {
        Self { output_scale_sq: log_sf2.exp(), length_scales: log_ls.iter().map(|l| l.exp()).collect() }
    }
}

/// `σ_f² exp(-½ Σ_i (x_i - x2_i)² / l_i²)`
pub fn se_ard<T: Real>(x: &[T], x2: &[T], p: &KernelParams<T>) -> Result<T> {
    if x.len() != p.dim() || x2.len() != p.dim() {
        return Err(dim_err(format!(
            "se_ard: inputs {} and {} for {} length-scales",
            x.len(),
            x2.len(),
            p.dim()
        )));
    }
    let r2: T = x
        .iter()
        .zip(x2)
        .zip(&p.length_scales)
        .map(|((&a, &b), &l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    Ok(p.output_scale_sq * (-T::lit(0.5) * r2).exp())
}

/// Gram/cross-covariance matrix with entry `(i, j) = se_ard(X_i, X2_j)`.
pub fn kernel_matrix<T: Real>(
    x: &DenseMatrix<T>,
    x2: &DenseMatrix<T>,
    p: &KernelParams<T>,
) -> Result<DenseMatrix<T>> {
    if x.cols() != p.dim() || x2.cols() != p.dim() {
        return Err(dim_err(format!(
            "kernel_matrix: input widths {} and {} for {} length-scales",
            x.cols(),
            x2.cols(),
            p.dim()
        )));
    }
    if std::ptr::eq(x, x2) {
        // exact symmetry for Gram matrices
        let mut k = DenseMatrix::zeros(x.rows(), x.rows());
        for i in 0..x.rows() {
            for j in 0..=i {
                let v = se_ard(x.row(i), x.row(j), p)?;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        return Ok(k);
    }
    Ok(se_ard_matrix(x, x2, p.output_scale_sq, &p.length_scales))
}
