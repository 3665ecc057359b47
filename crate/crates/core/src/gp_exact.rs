//! Exact single-task GP and exact LMC: marginal likelihoods and predictive
//! distributions. Used as baselines and as oracles for the sparse models.

use crate::autodiff::{Tape, Var};
use crate::data::MultiTaskDataset;
use crate::error::{dim_err, Error, Result};
use crate::kernels::{kernel_matrix, KernelParams};
use crate::numerics::{cholesky_with_jitter, CholeskyFactor, DenseMatrix};
use crate::scalar::Real;
use crate::train::AdamState;

/// Default cap on the total number of points an exact LMC will factorize.
pub const DEFAULT_SIZE_GUARD: usize = 2000;

fn half_log_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Single-task GP regression with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGpModel<T> {
    pub kernel: KernelParams<T>,
    pub noise_var: T,
    pub x: DenseMatrix<T>,
    pub y: Vec<T>,
}

impl<T: Real> ExactGpModel<T> {
    pub fn new(kernel: KernelParams<T>, noise_var: T, x: DenseMatrix<T>, y: Vec<T>) -> Result<Self> {
        if !(noise_var > T::zero()) {
            return Err(Error::NonPositiveNoise(noise_var.as_f64()));
        }
        if x.rows() != y.len() {
            return Err(dim_err(format!("{} inputs, {} targets", x.rows(), y.len())));
        }
        if x.cols() != kernel.dim() {
            return Err(dim_err(format!("inputs have {} columns, kernel {}", x.cols(), kernel.dim())));
        }
        Ok(Self { kernel, noise_var, x, y })
    }

    fn factor(&self) -> Result<CholeskyFactor<T>> {
        let mut k = kernel_matrix(&self.x, &self.x, &self.kernel)?;
        k.add_diag(self.noise_var);
        cholesky_with_jitter(&k, T::zero())
    }
}

/// `log N(y | 0, K + ν_ε I)`.
pub fn gp_log_marginal<T: Real>(m: &ExactGpModel<T>) -> Result<T> {
    let f = m.factor()?;
    let alpha = f.solve_lower(&DenseMatrix::column_vector(m.y.clone()));
    let quad = alpha.as_slice().iter().map(|&v| v * v).sum::<T>();
    let n = T::lit(m.y.len() as f64);
    Ok(-T::lit(0.5) * quad - T::lit(0.5) * f.log_det() - n * half_log_two_pi())
}

/// Predictive mean and variance of a noisy observation at `x_star`.
pub fn gp_predict<T: Real>(m: &ExactGpModel<T>, x_star: &[T]) -> Result<(T, T)> {
    let (mu, var) = gp_predict_many(m, &DenseMatrix::row_vector(x_star.to_vec()))?;
    Ok((mu[0], var[0]))
}

/// [`gp_predict`] at every row of `xs`, factorizing once.
pub fn gp_predict_many<T: Real>(m: &ExactGpModel<T>, xs: &DenseMatrix<T>) -> Result<(Vec<T>, Vec<T>)> {
    let f = m.factor()?;
    let ks = kernel_matrix(&m.x, xs, &m.kernel)?; // N×n
    let alpha = f.solve(&DenseMatrix::column_vector(m.y.clone()));
    let mean = ks.t_matmul(&alpha).into_vec();
    let v = f.solve_lower(&ks);
    let var = (0..xs.rows())
        .map(|j| {
            let red = (0..v.rows()).map(|i| v[(i, j)] * v[(i, j)]).sum::<T>();
            (m.kernel.output_scale_sq - red).max(T::zero()) + m.noise_var
        })
        .collect();
    Ok((mean, var))
}

/// On-tape log marginal likelihood in log-parameters.
pub fn gp_log_marginal_tape<'t, T: Real>(
    x: Var<'t, T>,
    y: Var<'t, T>,
    log_sf2: Var<'t, T>,
    log_ls: Var<'t, T>,
    log_noise: Var<'t, T>,
) -> Option<Var<'t, T>> {
    let tape = x.tape();
    let n = x.shape().0;
    let eye = tape.constant(DenseMatrix::identity(n));
    let k = tape.se_ard(x, x, log_sf2, log_ls).add(eye.mul_scalar(log_noise.exp()));
    let l = k.try_cholesky()?;
    let alpha = l.solve_lower(y);
    let lml = alpha
        .square()
        .sum()
        .scale(-T::lit(0.5))
        .sub(l.diag().ln().sum())
        .add_const(-T::lit(n as f64) * half_log_two_pi());
    Some(lml)
}

/// Gradient of [`gp_log_marginal`] with respect to
/// `(log σ_f², log l_1..l_D, log ν_ε)`.
pub fn gp_log_marginal_grad<T: Real>(m: &ExactGpModel<T>) -> Result<(T, Vec<T>)> {
    let tape = Tape::new();
    let log_sf2 = tape.scalar(m.kernel.log_output_scale_sq());
    let log_ls = tape.leaf(DenseMatrix::column_vector(m.kernel.log_length_scales()));
    let log_noise = tape.scalar(m.noise_var.ln());
    let out = gp_log_marginal_tape(
        tape.constant(m.x.clone()),
        tape.constant(DenseMatrix::column_vector(m.y.clone())),
        log_sf2,
        log_ls,
        log_noise,
    )
    .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    let g = tape.gradients(out);
    let mut grad = vec![g.wrt(log_sf2).item()];
    grad.extend_from_slice(g.wrt(log_ls).as_slice());
    grad.push(g.wrt(log_noise).item());
    Ok((out.item(), grad))
}

/// Type-II maximum likelihood by Adam ascent on the log-parameters.
pub fn fit_exact_gp<T: Real>(mut m: ExactGpModel<T>, iterations: usize, learning_rate: T) -> Result<ExactGpModel<T>> {
    let d = m.kernel.dim();
    let mut theta = vec![m.kernel.log_output_scale_sq()];
    theta.extend(m.kernel.log_length_scales());
    theta.push(m.noise_var.ln());
    let mut adam = AdamState::new(theta.len());
    let min_log_noise = T::lit(1e-6f64.ln());
    for _ in 0..iterations {
        let (_, grad) = gp_log_marginal_grad(&m)?;
        adam.step(&mut theta, &grad, learning_rate)
            .map_err(|_| Error::NonFiniteGradient { group: "exact_gp".into() })?;
        theta[d + 1] = theta[d + 1].max(min_log_noise);
        m.kernel = KernelParams::from_log(theta[0], &theta[1..=d]);
        m.noise_var = theta[d + 1].exp();
    }
    Ok(m)
}

/// Exact (non-sparse) LMC over heterotopic multi-task data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLmcModel<T> {
    pub kernels: Vec<KernelParams<T>>,
    /// C×Q; entry `(c, q)` is `a_q^c`.
    pub coreg: DenseMatrix<T>,
    pub noise_vars: Vec<T>,
    pub data: MultiTaskDataset<T>,
    pub size_guard: usize,
}

impl<T: Real> ExactLmcModel<T> {
    pub fn new(
        kernels: Vec<KernelParams<T>>,
        coreg: DenseMatrix<T>,
        noise_vars: Vec<T>,
        data: MultiTaskDataset<T>,
    ) -> Result<Self> {
        let c = data.n_tasks();
        if coreg.shape() != (c, kernels.len()) {
            return Err(dim_err(format!("coregionalization matrix {:?} for C={c}, Q={}", coreg.shape(), kernels.len())));
        }
        if noise_vars.len() != c {
            return Err(dim_err(format!("{} noise variances for {c} tasks", noise_vars.len())));
        }
        if let Some(&bad) = noise_vars.iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::NonPositiveNoise(bad.as_f64()));
        }
        if !coreg.is_finite() {
            return Err(Error::InvalidSpec("non-finite coregionalization matrix".into()));
        }
        Ok(Self { kernels, coreg, noise_vars, data, size_guard: DEFAULT_SIZE_GUARD })
    }

    pub fn with_size_guard(mut self, guard: usize) -> Self {
        self.size_guard = guard;
        self
    }

    fn check_size(&self) -> Result<()> {
        let n = self.data.total_points();
        if n > self.size_guard {
            return Err(Error::SizeMismatch(format!(
                "exact LMC on {n} points exceeds the size guard of {}",
                self.size_guard
            )));
        }
        Ok(())
    }

    /// Noise-free cross covariance between stacked points `(xa, ta)` and `(xb, tb)`.
    fn cross_cov(
        &self,
        xa: &DenseMatrix<T>,
        ta: &[usize],
        xb: &DenseMatrix<T>,
        tb: &[usize],
    ) -> Result<DenseMatrix<T>> {
        let mut out = DenseMatrix::zeros(xa.rows(), xb.rows());
        for (q, kern) in self.kernels.iter().enumerate() {
            let k = kernel_matrix(xa, xb, kern)?;
            for i in 0..xa.rows() {
                let ai = self.coreg[(ta[i], q)];
                for j in 0..xb.rows() {
                    out[(i, j)] += ai * self.coreg[(tb[j], q)] * k[(i, j)];
                }
            }
        }
        Ok(out)
    }

    /// `Σ_q K̄_q + Ξ` over the stacked training points.
    pub fn covariance(&self) -> Result<DenseMatrix<T>> {
        let x = self.data.pooled_inputs();
        let t = self.data.pooled_task_index();
        let mut k = self.cross_cov(&x, &t, &x, &t)?;
        for (i, &c) in t.iter().enumerate() {
            k[(i, i)] += self.noise_vars[c];
        }
        Ok(k)
    }
}

pub fn lmc_log_marginal<T: Real>(m: &ExactLmcModel<T>) -> Result<T> {
    m.check_size()?;
    let f = cholesky_with_jitter(&m.covariance()?, T::zero())?;
    let y = m.data.pooled_targets();
    let alpha = f.solve_lower(&DenseMatrix::column_vector(y.clone()));
    let quad = alpha.as_slice().iter().map(|&v| v * v).sum::<T>();
    Ok(-T::lit(0.5) * quad - T::lit(0.5) * f.log_det() - T::lit(y.len() as f64) * half_log_two_pi())
}

/// Joint predictive over all C tasks at one input: mean (C) and covariance
/// (C×C) of noisy observations.
pub fn lmc_predict<T: Real>(m: &ExactLmcModel<T>, x_star: &[T]) -> Result<(Vec<T>, DenseMatrix<T>)> {
    m.check_size()?;
    let c = m.data.n_tasks();
    let x = m.data.pooled_inputs();
    let t = m.data.pooled_task_index();
    let f = cholesky_with_jitter(&m.covariance()?, T::zero())?;
    let xs = DenseMatrix::from_fn(c, x_star.len(), |_, j| x_star[j]);
    let ts: Vec<usize> = (0..c).collect();
    let k_star = m.cross_cov(&x, &t, &xs, &ts)?; // N×C
    let alpha = f.solve(&DenseMatrix::column_vector(m.data.pooled_targets()));
    let mean = k_star.t_matmul(&alpha).into_vec();
    let v = f.solve_lower(&k_star);
    let mut cov = m.cross_cov(&xs, &ts, &xs, &ts)?.sub(&v.t_matmul(&v));
    for (k, &nv) in m.noise_vars.iter().enumerate() {
        cov[(k, k)] += nv;
    }
    // exact symmetry for downstream consumers
    let cov = DenseMatrix::from_fn(c, c, |i, j| T::lit(0.5) * (cov[(i, j)] + cov[(j, i)]));
    Ok((mean, cov))
}
