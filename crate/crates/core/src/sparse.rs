//! Inducing-point posteriors, marginal moments of q(f), the analytic KL
//! terms, and inducing-input initialization.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::kernels::{kernel_matrix, KernelParams};
use crate::neural::MixtureA;
use crate::numerics::cholesky::cholesky_plain;
use crate::numerics::matrix::{solve_lower_in_place, solve_lower_transpose_in_place};
use crate::numerics::{cholesky_with_jitter, DenseMatrix, RngStream, DEFAULT_JITTER};
use crate::scalar::Real;

/// Absolute diagonal jitter added to every `K_Z` before factorization.
/// Kept fixed (not escalated) so the objective stays a smooth function of
/// the parameters.
pub const INDUCING_JITTER: f64 = 1e-6;
pub const KMEANS_ITERATIONS: usize = 25;

/// Pseudo-inputs and Gaussian posterior `N(m, s_chol s_cholᵀ)` over `u_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingBlock<T> {
    pub z: DenseMatrix<T>,
    pub m: Vec<T>,
    pub s_chol: DenseMatrix<T>,
}

impl<T: Real> InducingBlock<T> {
    pub fn new(z: DenseMatrix<T>, m: Vec<T>, s_chol: DenseMatrix<T>) -> Result<Self> {
        let mq = z.rows();
        if m.len() != mq || s_chol.shape() != (mq, mq) {
            return Err(dim_err(format!(
                "{} inducing inputs, {} means, {:?} factor",
                mq,
                m.len(),
                s_chol.shape()
            )));
        }
        if (0..mq).any(|i| !(s_chol[(i, i)] > T::zero())) {
            return Err(Error::NonPositiveVariance(0.0));
        }
        Ok(Self { z, m, s_chol: s_chol.lower_triangle() })
    }

    /// `m = 0`, `S = K_Z`: the posterior equals the prior.
    pub fn prior_matched(z: DenseMatrix<T>, kernel: &KernelParams<T>) -> Result<Self> {
        let l = kz_cholesky(&z, kernel)?;
        let m = vec![T::zero(); z.rows()];
        Ok(Self { z, m, s_chol: l })
    }

    pub fn size(&self) -> usize {
        self.z.rows()
    }

    pub fn s(&self) -> DenseMatrix<T> {
        self.s_chol.matmul_t(&self.s_chol)
    }

    /// Unconstrained form of `s_chol`: strict lower part as is, log diagonal.
    pub fn s_raw(&self) -> DenseMatrix<T> {
        let n = self.size();
        DenseMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.s_chol[(i, j)],
            std::cmp::Ordering::Equal => self.s_chol[(i, i)].ln(),
            std::cmp::Ordering::Less => T::zero(),
        })
    }

    pub fn s_chol_from_raw(raw: &DenseMatrix<T>) -> DenseMatrix<T> {
        DenseMatrix::from_fn(raw.rows(), raw.cols(), |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => raw[(i, j)],
            std::cmp::Ordering::Equal => raw[(i, i)].exp(),
            std::cmp::Ordering::Less => T::zero(),
        })
    }
}

/// Per-point marginal moments of one latent function under q(f).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments<T> {
    pub mu: Vec<T>,
    pub var: Vec<T>,
    /// How many variances were negative before clamping.
    pub clamped: usize,
}

/// Cholesky factor of `K_Z + INDUCING_JITTER·I`, escalating only if the
/// fixed jitter is not enough.
pub fn kz_cholesky<T: Real>(z: &DenseMatrix<T>, kernel: &KernelParams<T>) -> Result<DenseMatrix<T>> {
    let mut kz = kernel_matrix(z, z, kernel)?;
    kz.add_diag(T::lit(INDUCING_JITTER));
    match cholesky_plain(&kz) {
        Some(l) => Ok(l),
        None => Ok(cholesky_with_jitter(&kz, T::lit(DEFAULT_JITTER))?.lower),
    }
}

/// Marginals of `q(f_q) = ∫ p(f_q | u_q) q(u_q) du_q` at the rows of `x`.
pub fn q_f_moments<T: Real>(
    block: &InducingBlock<T>,
    kernel: &KernelParams<T>,
    x: &DenseMatrix<T>,
) -> Result<LatentMoments<T>> {
    if x.cols() != block.z.cols() {
        return Err(dim_err(format!("inputs have {} columns, Z has {}", x.cols(), block.z.cols())));
    }
    let l = kz_cholesky(&block.z, kernel)?;
    let kzx = kernel_matrix(&block.z, x, kernel)?;
    let mut a = kzx;
    solve_lower_in_place(&l, &mut a); // L⁻¹ K_zx
    let mut lm = DenseMatrix::column_vector(block.m.clone());
    solve_lower_in_place(&l, &mut lm);
    let mu = a.t_matmul(&lm).into_vec();
    let mut b = a.clone();
    solve_lower_transpose_in_place(&l, &mut b); // K_Z⁻¹ K_zx
    let c = block.s_chol.t_matmul(&b);
    let n = x.rows();
    let mut var = Vec::with_capacity(n);
    let mut clamped = 0;
    for i in 0..n {
        let mut v = kernel.output_scale_sq;
        for k in 0..a.rows() {
            v += c[(k, i)] * c[(k, i)] - a[(k, i)] * a[(k, i)];
        }
        if v < T::zero() {
            clamped += 1;
            v = T::zero();
        }
        var.push(v);
    }
    if clamped > 0 {
        log::debug!("clamped {clamped} negative latent variances");
    }
    Ok(LatentMoments { mu, var, clamped })
}

/// `Σ_q KL[N(m_q, S_q) || N(0, K_{Z_q})]`.
pub fn kl_u<T: Real>(blocks: &[InducingBlock<T>], kernels: &[KernelParams<T>]) -> Result<T> {
    if blocks.len() != kernels.len() {
        return Err(dim_err(format!("{} blocks, {} kernels", blocks.len(), kernels.len())));
    }
    let mut total = T::zero();
    for (blk, k) in blocks.iter().zip(kernels) {
        let l = kz_cholesky(&blk.z, k)?;
        let mq = blk.size();
        let two = T::lit(2.0);
        let logdet_k = two * l.diag().into_iter().map(|d| d.ln()).sum::<T>();
        let logdet_s = two * blk.s_chol.diag().into_iter().map(|d| d.ln()).sum::<T>();
        let mut ls = blk.s_chol.clone();
        solve_lower_in_place(&l, &mut ls);
        let trace = ls.as_slice().iter().map(|&v| v * v).sum::<T>();
        let mut lm = DenseMatrix::column_vector(blk.m.clone());
        solve_lower_in_place(&l, &mut lm);
        let maha = lm.as_slice().iter().map(|&v| v * v).sum::<T>();
        total += T::lit(0.5) * (logdet_k - logdet_s - T::lit(mq as f64) + trace + maha);
    }
    Ok(total)
}

/// `KL[q(A) || N(0, I)]` for a fully factorized q(A).
pub fn kl_a<T: Real>(q_a: &MixtureA<T>) -> Result<T> {
    let mut total = T::zero();
    for (&mu, &lv) in q_a.mu.as_slice().iter().zip(q_a.log_nu.as_slice()) {
        let nu = lv.exp();
        if !(nu > T::zero()) || !nu.is_finite() {
            return Err(Error::NonPositiveVariance(nu.as_f64()));
        }
        total += -lv - T::one() + nu + mu * mu;
    }
    Ok(T::lit(0.5) * total)
}

/// One latent GP's inducing quantities on a tape.
pub struct InducingTape<'t, T> {
    pub z: Var<'t, T>,
    pub m: Var<'t, T>,
    pub s_raw: Var<'t, T>,
    pub log_sf2: Var<'t, T>,
    pub log_ls: Var<'t, T>,
    l: Var<'t, T>,
    s_chol: Var<'t, T>,
}

impl<'t, T: Real> InducingTape<'t, T> {
    pub fn new(
        tape: &'t Tape<T>,
        z: Var<'t, T>,
        m: Var<'t, T>,
        s_raw: Var<'t, T>,
        log_sf2: Var<'t, T>,
        log_ls: Var<'t, T>,
    ) -> Result<Self> {
        let kzz = tape.se_ard(z, z, log_sf2, log_ls).add_diag_const(T::lit(INDUCING_JITTER));
        let l = kzz
            .try_cholesky()
            .ok_or(Error::NotPositiveDefinite { jitter: INDUCING_JITTER })?;
        let s_chol = s_raw.lower_from_raw();
        Ok(Self { z, m, s_raw, log_sf2, log_ls, l, s_chol })
    }

    /// `(mu, var)` as n×1 columns at the rows of `x` (already warped, if a
    /// warp is in use, consistently with `z`).
    pub fn moments(&self, x: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let tape = x.tape();
        let n = x.shape().0;
        let kzx = tape.se_ard(self.z, x, self.log_sf2, self.log_ls);
        let a = self.l.solve_lower(kzx);
        let mu = a.t().matmul(self.l.solve_lower(self.m));
        let b = self.l.solve_lower_t(a);
        let c = self.s_chol.t().matmul(b);
        let kxx = self.log_sf2.exp().broadcast(n, 1);
        let var = kxx.sub(a.square().col_sums().t()).add(c.square().col_sums().t());
        (mu, var.clamp_min(T::zero()))
    }

    pub fn kl(&self) -> Var<'t, T> {
        let mq = self.z.shape().0;
        let logdet_k = self.l.diag().ln().sum().scale(T::lit(2.0));
        let logdet_s = self.s_raw.diag().sum().scale(T::lit(2.0));
        let trace = self.l.solve_lower(self.s_chol).square().sum();
        let maha = self.l.solve_lower(self.m).square().sum();
        logdet_k
            .sub(logdet_s)
            .add(trace)
            .add(maha)
            .add_const(-T::lit(mq as f64))
            .scale(T::lit(0.5))
    }
}

/// `KL[q(A) || N(0, I)]` on a tape.
pub fn kl_a_tape<'t, T: Real>(mu: Var<'t, T>, log_nu: Var<'t, T>) -> Var<'t, T> {
    log_nu
        .neg()
        .add(log_nu.exp())
        .add(mu.square())
        .add_const(-T::one())
        .sum()
        .scale(T::lit(0.5))
}

/// Seeded Lloyd's k-means; initial centroids are distinct data rows.
pub fn kmeans<T: Real>(x: &DenseMatrix<T>, k: usize, rng: &mut RngStream, iterations: usize) -> DenseMatrix<T> {
    let (n, d) = x.shape();
    assert!(k >= 1 && k <= n, "k-means with k={k} on {n} points");
    let mut centers = x.select_rows(&rng.sample_without_replacement(n, k));
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, slot) in assign.iter_mut().enumerate() {
            let xi = x.row(i);
            let mut best = (T::infinity(), 0);
            for c in 0..k {
                let dist: T = xi.iter().zip(centers.row(c)).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if *slot != best.1 {
                *slot = best.1;
                changed = true;
            }
        }
        let mut sums: DenseMatrix<T> = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = T::one() / T::lit(counts[c] as f64);
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

/// Rows of `x` with exact duplicates removed, first occurrence kept.
pub fn distinct_rows<T: Real>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut seen = std::collections::HashSet::new();
    let keep: Vec<usize> = (0..x.rows())
        .filter(|&i| seen.insert(x.row(i).iter().map(|v| v.as_f64().to_bits()).collect::<Vec<u64>>()))
        .collect();
    x.select_rows(&keep)
}

/// Inducing inputs: the distinct rows of `x` when there are at most `m` of
/// them (tasks observed at shared locations contribute each location once),
/// else k-means centroids.
pub fn init_inducing<T: Real>(x: &DenseMatrix<T>, m: usize, rng: &mut RngStream) -> DenseMatrix<T> {
    let x = distinct_rows(x);
    if m >= x.rows() {
        x
    } else {
        kmeans(&x, m, rng, KMEANS_ITERATIONS)
    }
}
