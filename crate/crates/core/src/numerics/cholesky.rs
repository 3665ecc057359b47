use super::matrix::{solve_lower_in_place, solve_lower_transpose_in_place, DenseMatrix};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// Relative jitter floor used once the first factorization attempt fails.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Number of ×10 escalations allowed after the first attempt.
pub const MAX_JITTER_ESCALATIONS: usize = 5;

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower Cholesky factor of `m + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T> {
    pub lower: DenseMatrix<T>,
    pub jitter_used: T,
}

/// Plain Cholesky without any jitter; `None` if a pivot is not strictly positive.
pub fn cholesky_plain<T: Real>(m: &DenseMatrix<T>) -> Option<DenseMatrix<T>> {
    let n = m.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        {
            let lj = l.row(j);
            for &v in &lj[..j] {
                d -= v * v;
            }
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        let inv = T::one() / djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s * inv;
        }
    }
    Some(l)
}

/// Factorizes a symmetric matrix, escalating diagonal jitter on failure.
///
/// `base_jitter` is relative to the mean diagonal. The first attempt uses it
/// as given (zero means "try exact"); each retry multiplies the jitter by ten,
/// starting from `max(base_jitter, 1e-6)`, at most five times.
pub fn cholesky_with_jitter<T: Real>(
    m: &DenseMatrix<T>,
    base_jitter: T,
) -> Result<CholeskyFactor<T>> {
    if !m.is_square() {
        return Err(dim_err(format!("cholesky of a {}x{} matrix", m.rows(), m.cols())));
    }
    let asym = m.relative_asymmetry();
    if asym > T::lit(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric { asymmetry: asym.as_f64() });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(CholeskyFactor { lower: DenseMatrix::zeros(0, 0), jitter_used: T::zero() });
    }
    let mean_diag = (m.trace() / T::lit(n as f64)).abs().max(T::min_positive_value());
    let mut jitter = base_jitter * mean_diag;
    let mut step = base_jitter.max(T::lit(DEFAULT_JITTER)) * mean_diag;
    for attempt in 0..=MAX_JITTER_ESCALATIONS {
        let mut a = m.clone();
        if jitter > T::zero() {
            a.add_diag(jitter);
        }
        if let Some(lower) = cholesky_plain(&a) {
            return Ok(CholeskyFactor { lower, jitter_used: jitter });
        }
        if attempt == MAX_JITTER_ESCALATIONS {
            break;
        }
        step = step * T::lit(10.0);
        jitter = step;
    }
    Err(Error::NotPositiveDefinite { jitter: jitter.as_f64() })
}

impl<T: Real> CholeskyFactor<T> {
    /// log |m + jitter I|
    pub fn log_det(&self) -> T {
        T::lit(2.0) * self.lower.diag().into_iter().map(|d| d.ln()).sum::<T>()
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut x = b.clone();
        solve_lower_in_place(&self.lower, &mut x);
        x
    }

    /// `(L Lᵀ)⁻¹ b`
    pub fn solve(&self, b: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut x = b.clone();
        solve_lower_in_place(&self.lower, &mut x);
        solve_lower_transpose_in_place(&self.lower, &mut x);
        x
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        self.solve(&DenseMatrix::column_vector(b.to_vec())).into_vec()
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        self.lower.matmul_t(&self.lower)
    }
}
