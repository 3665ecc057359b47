//! Factorized expected log-likelihood and the tight / importance-weighted
//! evidence lower bounds, with per-task minibatch scaling.
//!
//! All random draws an objective needs are collected up front in [`Draws`].
//! Fixing the draws makes the objective a deterministic, differentiable
//! function of the parameters, which is how gradients are checked.

use crate::autodiff::{Tape, Var};
use crate::data::MultiTaskDataset;
use crate::error::{dim_err, Error, Result};
use crate::model::{self, ModelState, Variant};
use crate::neural::{mlp_tape, prior_b_tape, Activation};
use crate::numerics::{DenseMatrix, RngStream};
use crate::params::TapeParams;
use crate::scalar::Real;
use crate::sparse::{kl_a_tape, InducingTape, LatentMoments};
use serde::{Deserialize, Serialize};

/// Lower bound on the number of f draws nmogp uses for its moment estimates.
pub const NMOGP_MIN_F_SAMPLES: usize = 10;

/// Which variance correction enters the expected log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `Σ_q (Σ_h a_h b_q^h)² ν_q`: the exact variance of the mixed output.
    #[default]
    ExactCross,
    /// `Σ_h Σ_q (a_h b_q^h)² ν_q`: drops the cross-h covariance.
    PaperLiteral,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_cross" => Ok(Self::ExactCross),
            "paper_literal" => Ok(Self::PaperLiteral),
            _ => Err(Error::Config(format!("unknown variance mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboConfig {
    pub s_train: usize,
    /// Per-task minibatch sizes `|B^c|`.
    pub minibatch_sizes: Vec<usize>,
    pub variance_mode: VarianceMode,
}

impl ElboConfig {
    pub fn validate(&self, task_sizes: &[usize]) -> Result<()> {
        if self.s_train == 0 {
            return Err(Error::Config("s_train must be at least 1".into()));
        }
        if self.minibatch_sizes.len() != task_sizes.len() {
            return Err(Error::Config("one minibatch size per task required".into()));
        }
        for (&b, &n) in self.minibatch_sizes.iter().zip(task_sizes) {
            if b == 0 || b > n {
                return Err(Error::Config(format!("minibatch size {b} outside 1..={n}")));
            }
        }
        Ok(())
    }
}

/// Stacked minibatch: points of task 0 first, then task 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: DenseMatrix<T>,
    pub y: Vec<T>,
    pub task: Vec<usize>,
    /// `N^c / |B^c|` for the point's task.
    pub scale: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn full(data: &MultiTaskDataset<T>) -> Self {
        let rows: Vec<Vec<usize>> = data.tasks.iter().map(|t| (0..t.len()).collect()).collect();
        Self::from_indices(data, &rows)
    }

    /// Rows `rows[c]` of each task, scaled by `N^c / |rows[c]|`.
    pub fn from_indices(data: &MultiTaskDataset<T>, rows: &[Vec<usize>]) -> Self {
        let d = data.input_dim();
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut x = Vec::with_capacity(total * d);
        let (mut y, mut task, mut scale) = (Vec::new(), Vec::new(), Vec::new());
        for (c, (t, idx)) in data.tasks.iter().zip(rows).enumerate() {
            let s = T::lit(t.len() as f64 / idx.len().max(1) as f64);
            for &i in idx {
                x.extend_from_slice(t.x.row(i));
                y.push(t.y[i]);
                task.push(c);
                scale.push(s);
            }
        }
        Self { x: DenseMatrix::from_vec(total, d, x).expect("batch shape"), y, task, scale }
    }

    /// Independent uniform draws without replacement per task; tasks with at
    /// most `size` points are used in full.
    pub fn sample(data: &MultiTaskDataset<T>, sizes: &[usize], rng: &mut RngStream) -> Self {
        let rows: Vec<Vec<usize>> = data
            .tasks
            .iter()
            .zip(sizes)
            .map(|(t, &b)| {
                if b >= t.len() {
                    (0..t.len()).collect()
                } else {
                    let mut idx = rng.sample_without_replacement(t.len(), b);
                    idx.sort_unstable();
                    idx
                }
            })
            .collect();
        Self::from_indices(data, &rows)
    }
}

/// Frozen reparameterization noise for one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws<T> {
    /// C×H noise for the single A draw (nsvlmc).
    pub a_eps: Option<DenseMatrix<T>>,
    /// One n×(H·Q) noise matrix per importance term (nsvlmc).
    pub b_eps: Vec<DenseMatrix<T>>,
    /// n×Q noise matrices for the f samples (nmogp).
    pub f_eps: Vec<DenseMatrix<T>>,
}

impl<T: Real> Draws<T> {
    pub fn none() -> Self {
        Self { a_eps: None, b_eps: Vec::new(), f_eps: Vec::new() }
    }

    /// Fresh draws for `n` batch points and `s` importance terms.
    pub fn sample(state: &ModelState<T>, n: usize, s: usize, rng: &mut RngStream) -> Self {
        let (c, q, h) = (state.n_tasks, state.q(), state.spec.h);
        match state.variant() {
            Variant::Nsvlmc => Self {
                a_eps: Some(rng.normal_matrix(c, h)),
                b_eps: (0..s).map(|_| rng.normal_matrix(n, h * q)).collect(),
                f_eps: Vec::new(),
            },
            Variant::Nmogp => Self {
                a_eps: None,
                b_eps: Vec::new(),
                f_eps: (0..s.max(NMOGP_MIN_F_SAMPLES)).map(|_| rng.normal_matrix(n, q)).collect(),
            },
            _ => Self::none(),
        }
    }

    /// The same draws restricted to the first importance term.
    pub fn first(&self) -> Self {
        Self { a_eps: self.a_eps.clone(), b_eps: self.b_eps.iter().take(1).cloned().collect(), f_eps: self.f_eps.clone() }
    }
}

/// Plain evaluation of the factorized expected log-likelihood.
///
/// `a` is C×H, `b_per_point[i]` is H×Q for batch point i, and `moments[q]`
/// holds the marginals of latent q at the batch points.
pub fn expected_loglik<T: Real>(
    batch: &Batch<T>,
    a: &DenseMatrix<T>,
    b_per_point: &[DenseMatrix<T>],
    moments: &[LatentMoments<T>],
    noise_vars: &[T],
    mode: VarianceMode,
) -> Result<T> {
    if let Some(&bad) = noise_vars.iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::NonPositiveNoise(bad.as_f64()));
    }
    let n = batch.len();
    if b_per_point.len() != n || moments.iter().any(|m| m.mu.len() != n) {
        return Err(dim_err("one mixture matrix and one moment per batch point required".to_string()));
    }
    let (hh, qq) = (a.cols(), moments.len());
    let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut total = T::zero();
    for i in 0..n {
        let c = batch.task[i];
        let b = &b_per_point[i];
        let nv = noise_vars[c];
        let mut mean = T::zero();
        let mut corr = T::zero();
        for q in 0..qq {
            let w: T = (0..hh).map(|h| a[(c, h)] * b[(h, q)]).sum();
            mean += w * moments[q].mu[i];
            corr += match mode {
                VarianceMode::ExactCross => w * w,
                VarianceMode::PaperLiteral => (0..hh).map(|h| (a[(c, h)] * b[(h, q)]).powi(2)).sum(),
            } * moments[q].var[i];
        }
        let r = batch.y[i] - mean;
        let per = -half_ln_2pi - T::lit(0.5) * nv.ln() - (r * r + corr) / (nv + nv);
        total += batch.scale[i] * per;
    }
    Ok(total)
}

/// Per-point Gaussian expected log-likelihood (n×1) on the tape from the
/// per-point predictive mean and variance correction.
fn gaussian_points<'t, T: Real>(y: Var<'t, T>, mean: Var<'t, T>, corr: Var<'t, T>, log_noise: Var<'t, T>) -> Var<'t, T> {
    let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let resid = y.sub(mean).square().add(corr);
    log_noise
        .scale(-T::lit(0.5))
        .sub(resid.mul(log_noise.neg().exp()).scale(T::lit(0.5)))
        .add_const(-half_ln_2pi)
}

/// Per-point `(mean, variance correction)` of the task outputs, one pair
/// per importance term, recorded on the tape.
pub fn likelihood_moments<'t, T: Real>(
    state: &ModelState<T>,
    tp: &TapeParams<'t, T>,
    inducing: &[InducingTape<'t, T>],
    batch: &Batch<T>,
    draws: &Draws<T>,
    mode: VarianceMode,
) -> Result<Vec<(Var<'t, T>, Var<'t, T>)>> {
    let tape = tp.vars()[0].tape();
    let q = state.q();
    let x = tape.constant(batch.x.clone());
    let xk = if state.variant() == Variant::SvlmcDkl {
        mlp_tape(tp, &state.params, model::WARP, Activation::Tanh, false, x)
    } else {
        x
    };
    let (mus, vars): (Vec<_>, Vec<_>) = inducing.iter().map(|it| it.moments(xk)).unzip();
    let mu = tape.concat_cols(&mus);
    let var = tape.concat_cols(&vars);
    let linear = |w: Var<'t, T>| (w.mul(mu).row_sums(), w.square().mul(var).row_sums());

    Ok(match state.variant() {
        Variant::Svlmc | Variant::SvlmcDkl => vec![linear(tp.get(model::COREG).gather_rows(&batch.task))],
        Variant::Ngprn => {
            let out = mlp_tape(tp, &state.params, model::NGPRN, Activation::Tanh, false, x);
            let onehot = DenseMatrix::from_fn(batch.len(), state.n_tasks, |i, c| {
                if batch.task[i] == c { T::one() } else { T::zero() }
            });
            vec![linear(tape.constant(onehot).mix(out, q))]
        }
        Variant::Nsvlmc => {
            let a_eps = draws.a_eps.as_ref().ok_or_else(|| dim_err("nsvlmc needs an A draw".to_string()))?;
            if draws.b_eps.is_empty() {
                return Err(dim_err("nsvlmc needs at least one B draw".to_string()));
            }
            let a = tp
                .get(model::QA_MU)
                .add(tp.get(model::QA_LOG_NU).scale(T::lit(0.5)).exp().mul(tape.constant(a_eps.clone())));
            let arows = a.gather_rows(&batch.task);
            let (mu_b, nu_b) = prior_b_tape(tp, &state.params, model::PRIOR, x);
            let sd_b = nu_b.sqrt();
            draws
                .b_eps
                .iter()
                .map(|eps| {
                    let b = mu_b.add(sd_b.mul(tape.constant(eps.clone())));
                    let w = arows.mix(b, q);
                    let mean = w.mul(mu).row_sums();
                    let corr = match mode {
                        VarianceMode::ExactCross => w.square().mul(var).row_sums(),
                        VarianceMode::PaperLiteral => arows.square().mix(b.square(), q).mul(var).row_sums(),
                    };
                    (mean, corr)
                })
                .collect()
        }
        Variant::Nmogp => {
            if draws.f_eps.len() < 2 {
                return Err(dim_err("nmogp needs at least two f draws".to_string()));
            }
            let arows = tp.get(model::NMOGP_A).gather_rows(&batch.task);
            let bt = tp.get(model::NMOGP_B).t();
            let sd = var.add_const(T::lit(1e-12)).sqrt();
            let act = state.spec.activation;
            let outs: Vec<Var<'t, T>> = draws
                .f_eps
                .iter()
                .map(|eps| {
                    let f = mu.add(sd.mul(tape.constant(eps.clone())));
                    act.apply_var(f.matmul(bt)).mul(arows).row_sums()
                })
                .collect();
            let inv = T::one() / T::lit(outs.len() as f64);
            let mean = tape.concat_cols(&outs).row_sums().scale(inv);
            let spread: Vec<Var<'t, T>> = outs.iter().map(|o| o.sub(mean).square()).collect();
            let corr = tape.concat_cols(&spread).row_sums().scale(inv);
            vec![(mean, corr)]
        }
    })
}

/// Per-point log-likelihood terms for each draw of B, the minibatch
/// scaling, and the total KL penalty, recorded on a tape.
///
/// B is independent across points under its prior, so the importance
/// average over the S draws is taken point by point.
pub struct Forward<'t, T> {
    pub points: Vec<Var<'t, T>>,
    pub scale: Var<'t, T>,
    pub kl: Var<'t, T>,
}

impl<'t, T: Real> Forward<'t, T> {
    /// Scaled expected log-likelihood `L̃` under draw `s`.
    pub fn term(&self, s: usize) -> Var<'t, T> {
        self.points[s].mul(self.scale).sum()
    }

    /// `Σ_i scale_i · log (1/S) Σ_s exp(ℓ_i^s) − KL`, log-sum-exp stabilized.
    pub fn iwvi(&self) -> Var<'t, T> {
        let tape = self.kl.tape();
        let s = T::lit(self.points.len() as f64);
        tape.concat_cols(&self.points)
            .row_logsumexp()
            .add_const(-s.ln())
            .mul(self.scale)
            .sum()
            .sub(self.kl)
    }

    /// `L̃_1 − KL`.
    pub fn tight(&self) -> Var<'t, T> {
        self.term(0).sub(self.kl)
    }
}

pub fn forward<'t, T: Real>(
    state: &ModelState<T>,
    tp: &TapeParams<'t, T>,
    batch: &Batch<T>,
    draws: &Draws<T>,
    mode: VarianceMode,
) -> Result<Forward<'t, T>> {
    if batch.is_empty() {
        return Err(Error::SizeMismatch("empty minibatch".into()));
    }
    let tape = tp.vars()[0].tape();
    let dkl = state.variant() == Variant::SvlmcDkl;
    let inducing = (0..state.q())
        .map(|q| {
            let z = tp.get(&model::ind_z(q));
            InducingTape::new(
                tape,
                z,
                tp.get(&model::ind_m(q)),
                tp.get(&model::ind_s(q)),
                tp.get(&model::kern_sf2(q)),
                tp.get(&model::kern_ls(q)),
            )
            .map(|it| {
                debug_assert!(!dkl || it.z.shape().1 == state.input_dim);
                it
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = likelihood_moments(state, tp, &inducing, batch, draws, mode)?;
    let y = tape.constant(DenseMatrix::column_vector(batch.y.clone()));
    let scale = tape.constant(DenseMatrix::column_vector(batch.scale.clone()));
    let log_noise = tp.get(model::NOISE).gather_rows(&batch.task);
    let points = pairs.into_iter().map(|(m, c)| gaussian_points(y, m, c, log_noise)).collect();
    let mut kl = inducing.iter().map(InducingTape::kl).reduce(|a, b| a.add(b)).expect("q >= 1");
    if state.variant() == Variant::Nsvlmc {
        kl = kl.add(kl_a_tape(tp.get(model::QA_MU), tp.get(model::QA_LOG_NU)));
    }
    Ok(Forward { points, scale, kl })
}

/// Importance-weighted bound on fixed draws (`S` = number of B draws).
pub fn elbo_iwvi<T: Real>(state: &ModelState<T>, batch: &Batch<T>, draws: &Draws<T>, mode: VarianceMode) -> Result<T> {
    let tape = Tape::new();
    let tp = state.params.on_tape(&tape);
    Ok(forward(state, &tp, batch, draws, mode)?.iwvi().item())
}

/// Tight bound on fixed draws: one A draw, the first B draw per point.
pub fn elbo_tight<T: Real>(state: &ModelState<T>, batch: &Batch<T>, draws: &Draws<T>, mode: VarianceMode) -> Result<T> {
    let tape = Tape::new();
    let tp = state.params.on_tape(&tape);
    Ok(forward(state, &tp, batch, &draws.first(), mode)?.tight().item())
}

/// [`elbo_iwvi`] with fresh draws from `rng`.
pub fn elbo_iwvi_sampled<T: Real>(
    state: &ModelState<T>,
    batch: &Batch<T>,
    s: usize,
    mode: VarianceMode,
    rng: &mut RngStream,
) -> Result<T> {
    let draws = Draws::sample(state, batch.len(), s, rng);
    elbo_iwvi(state, batch, &draws, mode)
}

/// IWVI objective and its gradient in flat parameter order.
pub fn objective_and_grad<T: Real>(
    state: &ModelState<T>,
    batch: &Batch<T>,
    draws: &Draws<T>,
    mode: VarianceMode,
) -> Result<(T, Vec<T>)> {
    let tape = Tape::new();
    let tp = state.params.on_tape(&tape);
    let out = forward(state, &tp, batch, draws, mode)?.iwvi();
    let g = tape.gradients(out);
    let grad = tp.vars().iter().flat_map(|&v| g.wrt(v).into_vec()).collect();
    Ok((out.item(), grad))
}
