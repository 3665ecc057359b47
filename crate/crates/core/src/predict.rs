//! Monte Carlo predictive distribution of the task outputs.
//!
//! Each draw of the random mixture weights gives a Gaussian over the C task
//! outputs; the predictive is the equal-weight mixture of those Gaussians,
//! summarized by its mean and variance.

use crate::error::{Error, Result};
use crate::model::{ModelState, Variant};
use crate::neural::sample_a;
use crate::numerics::{DenseMatrix, RngStream};
use crate::scalar::Real;
use crate::sparse::{q_f_moments, LatentMoments};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PRED_SAMPLES: usize = 100;

/// Moments of a (mixture) predictive for one task at one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary<T> {
    pub mean: T,
    pub var: T,
    pub n_samples: usize,
}

/// Law of total variance over equally weighted Gaussian components.
pub fn mixture_summary<T: Real>(means: &[T], vars: &[T]) -> PredictiveSummary<T> {
    let n = T::lit(means.len() as f64);
    let mean = means.iter().copied().sum::<T>() / n;
    let within = vars.iter().copied().sum::<T>() / n;
    let between = means.iter().map(|&m| (m - mean) * (m - mean)).sum::<T>() / n;
    PredictiveSummary { mean, var: within + between, n_samples: means.len() }
}

/// Marginals of every latent GP at the rows of `xs` (model input space).
pub fn predict_latent<T: Real>(state: &ModelState<T>, xs: &DenseMatrix<T>) -> Result<Vec<LatentMoments<T>>> {
    let xk = state.kernel_inputs(xs);
    state
        .blocks()
        .iter()
        .zip(state.kernels())
        .map(|(b, k)| q_f_moments(b, &k, &xk))
        .collect()
}

/// Per-task predictive at a single input.
pub fn predict_outputs<T: Real>(
    state: &ModelState<T>,
    x_star: &[T],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<PredictiveSummary<T>>> {
    let xs = DenseMatrix::row_vector(x_star.to_vec());
    Ok(predict_batch(state, &xs, n_samples, rng)?.pop().expect("one row"))
}

/// Per-point, per-task predictive at every row of `xs`: `out[i][c]`.
pub fn predict_batch<T: Real>(
    state: &ModelState<T>,
    xs: &DenseMatrix<T>,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<PredictiveSummary<T>>>> {
    if n_samples < 2 {
        return Err(Error::Config("predictive summaries need at least 2 samples".into()));
    }
    let (n, c, q) = (xs.rows(), state.n_tasks, state.q());
    let lat = predict_latent(state, xs)?;
    let noise = state.noise_vars();

    // Moments of the task outputs given fixed weights W (C×Q) at point i.
    let linear = |w: &DenseMatrix<T>, i: usize| -> (Vec<T>, Vec<T>) {
        (0..c)
            .map(|cc| {
                let mut m = T::zero();
                let mut v = noise[cc];
                for (qq, l) in lat.iter().enumerate() {
                    m += w[(cc, qq)] * l.mu[i];
                    v += w[(cc, qq)] * w[(cc, qq)] * l.var[i];
                }
                (m, v)
            })
            .unzip()
    };
    let deterministic = |w_of: &dyn Fn(usize) -> DenseMatrix<T>| -> Vec<Vec<PredictiveSummary<T>>> {
        (0..n)
            .map(|i| {
                let (m, v) = linear(&w_of(i), i);
                (0..c).map(|cc| PredictiveSummary { mean: m[cc], var: v[cc], n_samples }).collect()
            })
            .collect()
    };

    Ok(match state.variant() {
        Variant::Svlmc | Variant::SvlmcDkl => {
            let a = state.coreg().expect("svlmc weights");
            deterministic(&|_| a.clone())
        }
        Variant::Ngprn => {
            let out = state.ngprn_net().expect("ngprn network").forward(xs);
            deterministic(&|i| DenseMatrix::from_vec(c, q, out.row(i).to_vec()).expect("C·Q outputs"))
        }
        Variant::Nsvlmc => {
            let qa = state.mixture_a().expect("q(A)");
            let prior = state.prior().expect("prior");
            let h = state.spec.h;
            let (mu_b, nu_b) = prior.moments_batch(xs);
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let mut means = vec![Vec::with_capacity(n_samples); c];
                let mut vars = vec![Vec::with_capacity(n_samples); c];
                for _ in 0..n_samples {
                    let a = sample_a(&qa, &rng.normal_vec(c * h))?;
                    let eps = rng.normal_vec::<T>(h * q);
                    let b = DenseMatrix::from_fn(h, q, |hh, qq| {
                        let k = hh * q + qq;
                        mu_b[(i, k)] + nu_b[(i, k)].max(T::zero()).sqrt() * eps[k]
                    });
                    let (m, v) = linear(&a.matmul(&b), i);
                    for cc in 0..c {
                        means[cc].push(m[cc]);
                        vars[cc].push(v[cc]);
                    }
                }
                out.push((0..c).map(|cc| mixture_summary(&means[cc], &vars[cc])).collect());
            }
            out
        }
        Variant::Nmogp => {
            let (a, b) = state.nmogp_weights().expect("nmogp weights");
            let act = state.spec.activation;
            let h = b.rows();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let mut means = vec![Vec::with_capacity(n_samples); c];
                for _ in 0..n_samples {
                    let f: Vec<T> = lat.iter().map(|l| l.mu[i] + l.var[i].sqrt() * rng.normal::<T>()).collect();
                    let g: Vec<T> = (0..h)
                        .map(|hh| act.apply((0..q).map(|qq| b[(hh, qq)] * f[qq]).sum::<T>()))
                        .collect();
                    for (cc, mc) in means.iter_mut().enumerate() {
                        mc.push((0..h).map(|hh| a[(cc, hh)] * g[hh]).sum());
                    }
                }
                out.push(
                    (0..c)
                        .map(|cc| mixture_summary(&means[cc], &vec![noise[cc]; n_samples]))
                        .collect(),
                );
            }
            out
        }
    })
}
