//! The MLP-parameterized Gaussian prior over the latent mixture B(x) and the
//! factorized Gaussian posterior over the likelihood mixture A.
//!
//! B layout: entry `(h, q)` of the H×Q matrix sits at flat index `h·Q + q`.

use crate::autodiff::{sigmoid, Var};
use crate::error::{dim_err, Result};
use crate::numerics::{reparam_sample, DenseMatrix, RngStream};
use crate::params::{ParamSet, TapeParams};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Initial value of the prior variance scale ν₀.
pub const NU0_INIT: f64 = 1e-4;
/// Initial standard deviation of the entries of μ_A (variance 1e-2).
pub const MIXTURE_A_INIT_SD: f64 = 0.1;
/// Initial ν_A; a nearly deterministic start, like the one used for B.
pub const MIXTURE_A_INIT_NU: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Self::Tanh => v.tanh(),
            Self::Relu => v.max(T::zero()),
            Self::Identity => v,
        }
    }

    pub fn apply_var<'t, T: Real>(self, v: Var<'t, T>) -> Var<'t, T> {
        match self {
            Self::Tanh => v.tanh(),
            Self::Relu => v.relu(),
            Self::Identity => v,
        }
    }
}

/// Fully connected network; `activation` follows every layer when
/// `activate_last`, otherwise every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    /// `(W: fan_in × fan_out, b: 1 × fan_out)` per layer.
    pub layers: Vec<(DenseMatrix<T>, DenseMatrix<T>)>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl<T: Real> Mlp<T> {
    /// Xavier-normal weights, zero biases.
    pub fn xavier(sizes: &[usize], activation: Activation, activate_last: bool, rng: &mut RngStream) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let sd = (2.0 / (w[0] + w[1]) as f64).sqrt();
                let wm = DenseMatrix::from_fn(w[0], w[1], |_, _| T::lit(sd * rng.normal::<f64>()));
                (wm, DenseMatrix::zeros(1, w[1]))
            })
            .collect();
        Self { layers, activation, activate_last }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.0.cols())
    }

    /// Applies the network to every row of `x`.
    pub fn forward(&self, x: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let mut z = h.matmul(w);
            for i in 0..z.rows() {
                for (v, &bb) in z.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *v += bb;
                }
            }
            if k < last || self.activate_last {
                z = z.map(|v| self.activation.apply(v));
            }
            h = z;
        }
        h
    }

    pub fn write_params(&self, set: &mut ParamSet<T>, prefix: &str) {
        for (k, (w, b)) in self.layers.iter().enumerate() {
            set.insert(format!("{prefix}.{k}.w"), w.clone());
            set.insert(format!("{prefix}.{k}.b"), b.clone());
        }
    }

    pub fn read_params(set: &ParamSet<T>, prefix: &str, activation: Activation, activate_last: bool) -> Self {
        let mut layers = Vec::new();
        let mut k = 0;
        while set.contains(&format!("{prefix}.{k}.w")) {
            layers.push((set.get(&format!("{prefix}.{k}.w")).clone(), set.get(&format!("{prefix}.{k}.b")).clone()));
            k += 1;
        }
        Self { layers, activation, activate_last }
    }
}

/// Forward pass of an MLP stored under `prefix` in a tape parameter set.
pub fn mlp_tape<'t, T: Real>(
    tp: &TapeParams<'t, T>,
    set: &ParamSet<T>,
    prefix: &str,
    activation: Activation,
    activate_last: bool,
    x: Var<'t, T>,
) -> Var<'t, T> {
    let n_layers = (0..).take_while(|k| set.contains(&format!("{prefix}.{k}.w"))).count();
    let mut h = x;
    for k in 0..n_layers {
        let z = h.matmul(tp.get(&format!("{prefix}.{k}.w"))).add_row(tp.get(&format!("{prefix}.{k}.b")));
        h = if k + 1 < n_layers || activate_last { activation.apply_var(z) } else { z };
    }
    h
}

/// Input-dependent factorized Gaussian prior over the H×Q mixture B(x).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMixturePrior<T> {
    /// D → QH → QH → QH, tanh after every layer.
    pub trunk: Mlp<T>,
    pub head_mu: (DenseMatrix<T>, DenseMatrix<T>),
    pub head_nu: (DenseMatrix<T>, DenseMatrix<T>),
    pub log_nu0: T,
    pub h: usize,
    pub q: usize,
}

impl<T: Real> NeuralMixturePrior<T> {
    pub fn init(d: usize, q: usize, h: usize, rng: &mut RngStream) -> Self {
        let width = q * h;
        let trunk = Mlp::xavier(&[d, width, width, width], Activation::Tanh, true, rng);
        let head = |rng: &mut RngStream| {
            let l = Mlp::<T>::xavier(&[width, h * q], Activation::Identity, false, rng);
            l.layers.into_iter().next().expect("one layer")
        };
        let head_mu = head(rng);
        let head_nu = head(rng);
        Self { trunk, head_mu, head_nu, log_nu0: T::lit(NU0_INIT.ln()), h, q }
    }

    pub fn nu0(&self) -> T {
        self.log_nu0.exp()
    }

    /// `(μ_B, ν_B)` for every row of `x`, each n×(H·Q).
    pub fn moments_batch(&self, x: &DenseMatrix<T>) -> (DenseMatrix<T>, DenseMatrix<T>) {
        let t = self.trunk.forward(x);
        let affine = |(w, b): &(DenseMatrix<T>, DenseMatrix<T>)| {
            let mut z = t.matmul(w);
            for i in 0..z.rows() {
                for (v, &bb) in z.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *v += bb;
                }
            }
            z
        };
        let mu = affine(&self.head_mu);
        let nu0 = self.nu0();
        let nu = affine(&self.head_nu).map(|v| nu0 * sigmoid(v));
        (mu, nu)
    }

    pub fn write_params(&self, set: &mut ParamSet<T>, prefix: &str) {
        self.trunk.write_params(set, &format!("{prefix}.trunk"));
        set.insert(format!("{prefix}.head_mu.w"), self.head_mu.0.clone());
        set.insert(format!("{prefix}.head_mu.b"), self.head_mu.1.clone());
        set.insert(format!("{prefix}.head_nu.w"), self.head_nu.0.clone());
        set.insert(format!("{prefix}.head_nu.b"), self.head_nu.1.clone());
        set.insert(format!("{prefix}.log_nu0"), DenseMatrix::scalar(self.log_nu0));
    }

    pub fn read_params(set: &ParamSet<T>, prefix: &str, q: usize, h: usize) -> Self {
        let g = |n: &str| set.get(&format!("{prefix}.{n}")).clone();
        Self {
            trunk: Mlp::read_params(set, &format!("{prefix}.trunk"), Activation::Tanh, true),
            head_mu: (g("head_mu.w"), g("head_mu.b")),
            head_nu: (g("head_nu.w"), g("head_nu.b")),
            log_nu0: g("log_nu0").item(),
            h,
            q,
        }
    }
}

/// Prior moments `(μ_B, ν_B)` at one input, flattened as `h·Q + q`.
pub fn prior_b_moments<T: Real>(prior: &NeuralMixturePrior<T>, x: &[T]) -> (Vec<T>, Vec<T>) {
    let (mu, nu) = prior.moments_batch(&DenseMatrix::row_vector(x.to_vec()));
    (mu.into_vec(), nu.into_vec())
}

/// One draw of B(x) as an H×Q matrix.
pub fn sample_b<T: Real>(prior: &NeuralMixturePrior<T>, x: &[T], eps: &[T]) -> Result<DenseMatrix<T>> {
    let (mu, nu) = prior_b_moments(prior, x);
    if eps.len() != mu.len() {
        return Err(dim_err(format!("{} noise values for {} entries of B", eps.len(), mu.len())));
    }
    DenseMatrix::from_vec(prior.h, prior.q, reparam_sample(&mu, &nu, eps))
}

/// On-tape `(μ_B, ν_B)` for the rows of `x`, each n×(H·Q).
pub fn prior_b_tape<'t, T: Real>(
    tp: &TapeParams<'t, T>,
    set: &ParamSet<T>,
    prefix: &str,
    x: Var<'t, T>,
) -> (Var<'t, T>, Var<'t, T>) {
    let t = mlp_tape(tp, set, &format!("{prefix}.trunk"), Activation::Tanh, true, x);
    let g = |n: &str| tp.get(&format!("{prefix}.{n}"));
    let mu = t.matmul(g("head_mu.w")).add_row(g("head_mu.b"));
    let n = x.shape().0;
    let hq = mu.shape().1;
    let nu0 = g("log_nu0").exp().broadcast(n, hq);
    let nu = t.matmul(g("head_nu.w")).add_row(g("head_nu.b")).sigmoid().mul(nu0);
    (mu, nu)
}

/// Fully factorized Gaussian q(A) over the C×H likelihood mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureA<T> {
    pub mu: DenseMatrix<T>,
    pub log_nu: DenseMatrix<T>,
}

impl<T: Real> MixtureA<T> {
    /// μ_A ~ N(0, 1e-2), ν_A = 1e-4.
    pub fn init(c: usize, h: usize, rng: &mut RngStream) -> Self {
        Self {
            mu: DenseMatrix::from_fn(c, h, |_, _| T::lit(MIXTURE_A_INIT_SD * rng.normal::<f64>())),
            log_nu: DenseMatrix::filled(c, h, T::lit(MIXTURE_A_INIT_NU.ln())),
        }
    }

    pub fn nu(&self) -> DenseMatrix<T> {
        self.log_nu.map(|v| v.exp())
    }
}

/// One draw of A as a C×H matrix.
pub fn sample_a<T: Real>(q_a: &MixtureA<T>, eps: &[T]) -> Result<DenseMatrix<T>> {
    let (c, h) = q_a.mu.shape();
    if eps.len() != c * h {
        return Err(dim_err(format!("{} noise values for a {c}x{h} mixture", eps.len())));
    }
    DenseMatrix::from_vec(c, h, reparam_sample(q_a.mu.as_slice(), q_a.nu().as_slice(), eps))
}
