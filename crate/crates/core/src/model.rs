//! The five trainable models as configurations of the shared sparse machinery.
//!
//! Every variant owns Q latent GPs (kernel + inducing block each) and one
//! noise variance per task; they differ only in how the per-point weights
//! mixing the latent functions into task outputs are produced:
//!
//! | variant     | weights for task c at x                          |
//! |-------------|--------------------------------------------------|
//! | `svlmc`     | fixed row `a^c` of a C×Q matrix                  |
//! | `nsvlmc`    | `a^c B(x)` with `A ~ q(A)`, `B(x) ~ p(B | x)`     |
//! | `nmogp`     | nonlinear: `Σ_h a_h^c σ(Σ_q b_q^h f_q)`          |
//! | `ngprn`     | row c of a deterministic MLP output `A(x)`       |
//! | `svlmc-dkl` | as `svlmc`, kernels see MLP-warped inputs        |

use crate::data::MultiTaskDataset;
use crate::error::{Error, Result};
use crate::kernels::{KernelParams, DEFAULT_LENGTH_SCALE, DEFAULT_OUTPUT_SCALE_SQ};
use crate::neural::{Activation, MixtureA, Mlp, NeuralMixturePrior};
use crate::numerics::{DenseMatrix, RngStream};
use crate::params::ParamSet;
use crate::scalar::Real;
use crate::sparse::{init_inducing, InducingBlock};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Initial noise variance of every task (outputs are normalized).
pub const DEFAULT_NOISE_INIT: f64 = 0.1;
/// Hidden width of the NGPRN weight network.
pub const DEFAULT_NGPRN_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "svlmc")]
    Svlmc,
    #[serde(rename = "nsvlmc")]
    Nsvlmc,
    #[serde(rename = "nmogp")]
    Nmogp,
    #[serde(rename = "ngprn")]
    Ngprn,
    #[serde(rename = "svlmc-dkl")]
    SvlmcDkl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Svlmc, Self::Nsvlmc, Self::Nmogp, Self::Ngprn, Self::SvlmcDkl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Svlmc => "svlmc",
            Self::Nsvlmc => "nsvlmc",
            Self::Nmogp => "nmogp",
            Self::Ngprn => "ngprn",
            Self::SvlmcDkl => "svlmc-dkl",
        }
    }

    /// Whether the objective involves random draws besides minibatching.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Nsvlmc | Self::Nmogp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected one of svlmc, nsvlmc, nmogp, ngprn, svlmc-dkl)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub variant: Variant,
    pub q: usize,
    /// Width H of the latent mixture (nsvlmc, nmogp).
    pub h: usize,
    pub m_per_latent: usize,
    /// Nonlinearity of nmogp.
    pub activation: Activation,
    /// Hidden layer sizes of the svlmc-dkl warp; empty means `[max(D, 8)]`.
    pub dkl_layers: Vec<usize>,
    pub ngprn_hidden: usize,
    pub length_scale_init: f64,
    pub noise_init: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Nsvlmc,
            q: 2,
            h: 20,
            m_per_latent: 100,
            activation: Activation::Tanh,
            dkl_layers: Vec::new(),
            ngprn_hidden: DEFAULT_NGPRN_HIDDEN,
            length_scale_init: DEFAULT_LENGTH_SCALE,
            noise_init: DEFAULT_NOISE_INIT,
        }
    }
}

impl ModelSpec {
    pub fn new(variant: Variant, q: usize, h: usize, m_per_latent: usize) -> Self {
        Self { variant, q, h, m_per_latent, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.q == 0 {
            return bad("q must be at least 1");
        }
        if self.h == 0 && matches!(self.variant, Variant::Nsvlmc | Variant::Nmogp) {
            return bad("h must be at least 1");
        }
        if self.m_per_latent == 0 {
            return bad("m_per_latent must be at least 1");
        }
        if !(self.length_scale_init > 0.0) || !(self.noise_init > 0.0) {
            return bad("initial length-scale and noise must be positive");
        }
        if self.variant == Variant::Ngprn && self.ngprn_hidden == 0 {
            return bad("ngprn_hidden must be at least 1");
        }
        if self.dkl_layers.contains(&0) {
            return bad("dkl layer sizes must be positive");
        }
        Ok(())
    }
}

/// Trainable state: the spec, data shape, and all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub spec: ModelSpec,
    pub n_tasks: usize,
    pub input_dim: usize,
    /// Training-set size `N^c` per task, for minibatch scaling.
    pub task_sizes: Vec<usize>,
    pub params: ParamSet<T>,
}

pub(crate) fn kern_sf2(q: usize) -> String {
    format!("kern.{q}.log_sf2")
}
pub(crate) fn kern_ls(q: usize) -> String {
    format!("kern.{q}.log_ls")
}
pub(crate) fn ind_z(q: usize) -> String {
    format!("ind.{q}.z")
}
pub(crate) fn ind_m(q: usize) -> String {
    format!("ind.{q}.m")
}
pub(crate) fn ind_s(q: usize) -> String {
    format!("ind.{q}.s_raw")
}
pub(crate) const NOISE: &str = "noise.log_var";
pub(crate) const COREG: &str = "coreg.a";
pub(crate) const PRIOR: &str = "prior";
pub(crate) const QA_MU: &str = "qa.mu";
pub(crate) const QA_LOG_NU: &str = "qa.log_nu";
pub(crate) const NMOGP_A: &str = "nmogp.a";
pub(crate) const NMOGP_B: &str = "nmogp.b";
pub(crate) const NGPRN: &str = "ngprn";
pub(crate) const WARP: &str = "warp";

/// Builds the initial state for `spec` on (normalized) `data`.
pub fn build_model<T: Real>(spec: &ModelSpec, data: &MultiTaskDataset<T>, seed: u64) -> Result<ModelState<T>> {
    spec.validate()?;
    let (c, d, q, h) = (data.n_tasks(), data.input_dim(), spec.q, spec.h);
    let root = RngStream::new(seed, 0);
    let mut p = ParamSet::new();

    let warp = (spec.variant == Variant::SvlmcDkl).then(|| {
        let hidden = if spec.dkl_layers.is_empty() { vec![d.max(8)] } else { spec.dkl_layers.clone() };
        let sizes: Vec<usize> = std::iter::once(d).chain(hidden).chain(std::iter::once(d)).collect();
        Mlp::<T>::xavier(&sizes, Activation::Tanh, false, &mut root.fork(5))
    });

    let pooled = data.pooled_inputs();
    let kernel_inputs = match &warp {
        Some(w) => w.forward(&pooled),
        None => pooled,
    };
    let kernel = KernelParams::isotropic(d, T::lit(DEFAULT_OUTPUT_SCALE_SQ), T::lit(spec.length_scale_init));
    for qq in 0..q {
        p.insert(kern_sf2(qq), DenseMatrix::scalar(kernel.log_output_scale_sq()));
        p.insert(kern_ls(qq), DenseMatrix::column_vector(kernel.log_length_scales()));
    }
    for qq in 0..q {
        let mut rng = root.fork(100 + qq as u64);
        let z = init_inducing(&kernel_inputs, spec.m_per_latent, &mut rng);
        let blk = InducingBlock::prior_matched(z, &kernel)?;
        // DKL inducing inputs live in the warped space; store them there.
        p.insert(ind_z(qq), blk.z.clone());
        p.insert(ind_m(qq), DenseMatrix::column_vector(blk.m.clone()));
        p.insert(ind_s(qq), blk.s_raw());
    }
    p.insert(NOISE, DenseMatrix::filled(c, 1, T::lit(spec.noise_init.ln())));

    match spec.variant {
        Variant::Svlmc | Variant::SvlmcDkl => {
            let mut rng = root.fork(2);
            p.insert(COREG, DenseMatrix::from_fn(c, q, |_, _| rng.normal::<T>()));
        }
        Variant::Nsvlmc => {
            NeuralMixturePrior::<T>::init(d, q, h, &mut root.fork(3)).write_params(&mut p, PRIOR);
            let qa = MixtureA::<T>::init(c, h, &mut root.fork(2));
            p.insert(QA_MU, qa.mu);
            p.insert(QA_LOG_NU, qa.log_nu);
        }
        Variant::Nmogp => {
            let mut rng = root.fork(2);
            let sd = (1.0 / h as f64).sqrt();
            p.insert(NMOGP_A, DenseMatrix::from_fn(c, h, |_, _| T::lit(sd * rng.normal::<f64>())));
            p.insert(NMOGP_B, DenseMatrix::from_fn(h, q, |_, _| rng.normal::<T>()));
        }
        Variant::Ngprn => {
            let w = spec.ngprn_hidden;
            Mlp::<T>::xavier(&[d, w, w, w, c * q], Activation::Tanh, false, &mut root.fork(4))
                .write_params(&mut p, NGPRN);
        }
    }
    if let Some(w) = warp {
        w.write_params(&mut p, WARP);
    }
    Ok(ModelState { spec: spec.clone(), n_tasks: c, input_dim: d, task_sizes: data.task_sizes(), params: p })
}

impl<T: Real> ModelState<T> {
    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn q(&self) -> usize {
        self.spec.q
    }

    pub fn kernels(&self) -> Vec<KernelParams<T>> {
        (0..self.q())
            .map(|q| KernelParams::from_log(self.params.get(&kern_sf2(q)).item(), self.params.get(&kern_ls(q)).as_slice()))
            .collect()
    }

    /// Inducing blocks; for svlmc-dkl their inputs live in the warped space.
    pub fn blocks(&self) -> Vec<InducingBlock<T>> {
        (0..self.q())
            .map(|q| InducingBlock {
                z: self.params.get(&ind_z(q)).clone(),
                m: self.params.get(&ind_m(q)).as_slice().to_vec(),
                s_chol: InducingBlock::s_chol_from_raw(self.params.get(&ind_s(q))),
            })
            .collect()
    }

    pub fn noise_vars(&self) -> Vec<T> {
        self.params.get(NOISE).as_slice().iter().map(|v| v.exp()).collect()
    }

    pub fn coreg(&self) -> Option<DenseMatrix<T>> {
        self.params.contains(COREG).then(|| self.params.get(COREG).clone())
    }

    pub fn prior(&self) -> Option<NeuralMixturePrior<T>> {
        self.params
            .contains(QA_MU)
            .then(|| NeuralMixturePrior::read_params(&self.params, PRIOR, self.q(), self.spec.h))
    }

    pub fn mixture_a(&self) -> Option<MixtureA<T>> {
        self.params.contains(QA_MU).then(|| MixtureA {
            mu: self.params.get(QA_MU).clone(),
            log_nu: self.params.get(QA_LOG_NU).clone(),
        })
    }

    /// `(A: C×H, B: H×Q)` of nmogp.
    pub fn nmogp_weights(&self) -> Option<(DenseMatrix<T>, DenseMatrix<T>)> {
        self.params
            .contains(NMOGP_A)
            .then(|| (self.params.get(NMOGP_A).clone(), self.params.get(NMOGP_B).clone()))
    }

    pub fn ngprn_net(&self) -> Option<Mlp<T>> {
        self.params.contains(&format!("{NGPRN}.0.w")).then(|| Mlp::read_params(&self.params, NGPRN, Activation::Tanh, false))
    }

    pub fn warp_net(&self) -> Option<Mlp<T>> {
        self.params.contains(&format!("{WARP}.0.w")).then(|| Mlp::read_params(&self.params, WARP, Activation::Tanh, false))
    }

    /// Inputs as seen by the kernels.
    pub fn kernel_inputs(&self, x: &DenseMatrix<T>) -> DenseMatrix<T> {
        match self.warp_net() {
            Some(w) => w.forward(x),
            None => x.clone(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }
}
