use super::cholesky::cholesky_with_jitter;
use super::matrix::DenseMatrix;
use crate::error::{dim_err, Result};
use crate::scalar::Real;

/// `log N(y | mu, cov)` through a Cholesky factorization of `cov`.
pub fn gaussian_logpdf<T: Real>(y: &[T], mu: &[T], cov: &DenseMatrix<T>) -> Result<T> {
    let n = y.len();
    if mu.len() != n || cov.rows() != n || cov.cols() != n {
        return Err(dim_err(format!(
            "logpdf: y {n}, mu {}, cov {}x{}",
            mu.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let chol = cholesky_with_jitter(cov, T::zero())?;
    let r: Vec<T> = y.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let z = chol.solve_lower(&DenseMatrix::column_vector(r));
    let quad: T = z.as_slice().iter().map(|&v| v * v).sum();
    let two_pi = T::lit(std::f64::consts::TAU);
    Ok(-T::lit(0.5) * (quad + chol.log_det() + T::lit(n as f64) * two_pi.ln()))
}

/// Univariate `log N(y | mu, var)`.
#[inline]
pub fn normal_logpdf<T: Real>(y: T, mu: T, var: T) -> T {
    let d = y - mu;
    -T::lit(0.5) * (T::lit(std::f64::consts::TAU) * var).ln() - d * d / (T::lit(2.0) * var)
}
