//! Adam ascent on the importance-weighted bound.

use crate::data::MultiTaskDataset;
use crate::elbo::{objective_and_grad, Batch, Draws, VarianceMode};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::numerics::RngStream;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

pub const DEFAULT_LEARNING_RATE: f64 = 5e-3;
pub const DEFAULT_S_TRAIN: usize = 10;

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: usize,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    /// One ascent step in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) -> Result<()> {
        if params.len() != grads.len() || grads.len() != self.first_moment.len() {
            return Err(crate::error::dim_err(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { group: "unknown".into() });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p += lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real>(params: &[T], grads: &[T], st: &AdamState<T>, lr: T) -> Result<(Vec<T>, AdamState<T>)> {
    let mut p = params.to_vec();
    let mut s = st.clone();
    s.step(&mut p, grads, lr)?;
    Ok((p, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Per-task minibatch size; tasks with fewer points use all of them.
    pub minibatch: usize,
    pub s_train: usize,
    pub seed: u64,
    pub log_every: usize,
    pub variance_mode: VarianceMode,
    /// Parameter-group name prefixes held fixed.
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            iterations: 10_000,
            minibatch: 32,
            s_train: DEFAULT_S_TRAIN,
            seed: 0,
            log_every: 100,
            variance_mode: VarianceMode::ExactCross,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.minibatch == 0 || self.s_train == 0 || self.log_every == 0 {
            return Err(Error::Config("minibatch, s_train and log_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub objective: f64,
    pub seconds: f64,
}

/// Objective estimates recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub points: Vec<TracePoint>,
}

impl Trace {
    /// CSV with header `step,objective,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,objective,seconds\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{:.6}", p.step, p.objective, p.seconds);
        }
        s
    }

    /// Deterministic part of the trace (no wall-clock).
    pub fn objectives(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.objective).collect()
    }
}

/// Stream id of the training RNG; fixed so traces depend on the seed only.
const TRAIN_STREAM: u64 = 7;

/// Runs `cfg.iterations` Adam ascent steps on fresh minibatches and draws.
///
/// The objective recorded at step `k` is the estimate evaluated before the
/// k-th update; every `log_every` steps and the final step are recorded.
pub fn train<T: Real>(
    state: ModelState<T>,
    data: &MultiTaskDataset<T>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, Trace)> {
    train_observed(state, data, cfg, |_, _| {})
}

/// [`train`] that also hands the state to `observe` at every recorded step,
/// before that step's update.
pub fn train_observed<T: Real>(
    mut state: ModelState<T>,
    data: &MultiTaskDataset<T>,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &ModelState<T>),
) -> Result<(ModelState<T>, Trace)> {
    cfg.validate()?;
    if data.task_sizes() != state.task_sizes {
        return Err(Error::SizeMismatch("model was built for different data".into()));
    }
    let mut rng = RngStream::new(cfg.seed, TRAIN_STREAM);
    let mut flat = state.params.flatten();
    let mut adam = AdamState::new(flat.len());
    let frozen: Vec<(usize, usize)> = state
        .params
        .names()
        .iter()
        .filter(|n| cfg.freeze.iter().any(|f| n.starts_with(f.as_str())))
        .map(|n| state.params.span(n))
        .collect();
    let sizes = vec![cfg.minibatch; data.n_tasks()];
    let lr = T::lit(cfg.learning_rate);
    let start = Instant::now();
    let mut trace = Trace::default();
    for step in 0..cfg.iterations {
        let batch = Batch::sample(data, &sizes, &mut rng);
        let draws = Draws::sample(&state, batch.len(), cfg.s_train, &mut rng);
        let (value, mut grad) = match objective_and_grad(&state, &batch, &draws, cfg.variance_mode) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) => {
                return Err(Error::NonFiniteObjective { step, group: diagnose(&state, None) })
            }
            Err(e) => return Err(e),
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { step, group: diagnose(&state, Some(&grad)) });
        }
        for &(off, len) in &frozen {
            grad[off..off + len].iter_mut().for_each(|g| *g = T::zero());
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.iterations {
            trace.points.push(TracePoint { step, objective: value.as_f64(), seconds: start.elapsed().as_secs_f64() });
            log::debug!("step {step}: objective {:.4}", value.as_f64());
            observe(step, &state);
        }
        adam.step(&mut flat, &grad, lr)?;
        state.params.set_flat(&flat)?;
    }
    Ok((state, trace))
}

/// Names the first parameter group with non-finite values or gradients.
fn diagnose<T: Real>(state: &ModelState<T>, grad: Option<&[T]>) -> String {
    for (name, v) in state.params.groups() {
        if !v.is_finite() {
            return name.to_string();
        }
        if let Some(g) = grad {
            let (off, len) = state.params.span(name);
            if g[off..off + len].iter().any(|x| !x.is_finite()) {
                return name.to_string();
            }
        }
    }
    // A failed factorization points at the kernel and inducing groups.
    "kern/ind (kernel matrix not positive definite)".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let st = AdamState::new(2);
        let (p, s) = adam_step(&[1.0, -2.0], &[0.0, 0.0], &st, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let st = AdamState::new(3);
        let (p, _) = adam_step(&[0.0; 3], &[2.0, -0.5, 1e-3], &st, 0.01).unwrap();
        // m̂ = g, v̂ = g²  →  Δ = lr·g/(|g|+eps)
        for (d, g) in p.iter().zip([2.0f64, -0.5, 1e-3]) {
            assert!((d - 0.01 * g / (g.abs() + 1e-8)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            st.step(&mut p, &[3.7], 0.01).unwrap();
            last = p[0] - before;
        }
        assert!(f64::abs(last - 0.01) < 1e-8);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let st = AdamState::new(1);
        assert!(matches!(adam_step(&[0.0], &[f64::NAN], &st, 0.1), Err(Error::NonFiniteGradient { .. })));
    }
}
