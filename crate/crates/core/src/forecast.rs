//! Cross-case forecasting of POD coefficients.
//!
//! A data-rich case I and a data-poor case II share one spatial basis,
//! computed from case I. For every retained mode a two-task model learns the
//! one-step autoregressive map of both coefficient series jointly; case II
//! is then forecast from its last observed window. A single-task exact GP
//! on the case II pairs alone is the baseline.

use crate::data::{mean_and_var, MultiTaskDataset, TaskData};
use crate::error::{Error, Result};
use crate::experiment::{fluidized_defaults, predict_raw, InducingSize};
use crate::gp_exact::{fit_exact_gp, gp_predict, ExactGpModel};
use crate::kernels::{KernelParams, SARCOS_LENGTH_SCALE};
use crate::model::{build_model, ModelSpec, Variant};
use crate::numerics::{DenseMatrix, RngStream};
use crate::pod::{ar_windowing, pod_decompose, SnapshotMatrix, DEFAULT_WINDOW};
use crate::sparse::distinct_rows;
use crate::train::{train, TrainConfig};
use serde::{Deserialize, Serialize};

const FORECAST_STREAM: u64 = 0xf0c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub rank: usize,
    pub window: usize,
    /// Leading snapshots of case II available for training.
    pub n_obs: usize,
    pub model: ModelSpec,
    pub inducing: InducingSize,
    pub train: TrainConfig,
    pub n_pred_samples: usize,
    /// Adam iterations and step of the baseline GP fit.
    pub baseline_iterations: usize,
    pub baseline_learning_rate: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        let d = fluidized_defaults();
        Self {
            rank: 5,
            window: DEFAULT_WINDOW,
            n_obs: 20,
            // windows are standardized D-vectors; 0.1 leaves neighbouring
            // windows uncorrelated, so use the high-dimensional setting
            model: ModelSpec {
                length_scale_init: SARCOS_LENGTH_SCALE,
                ..ModelSpec::new(Variant::Nsvlmc, d.q, d.h, 500)
            },
            inducing: d.inducing,
            train: TrainConfig { iterations: d.iterations, minibatch: d.minibatch, ..TrainConfig::default() },
            n_pred_samples: 100,
            baseline_iterations: 500,
            baseline_learning_rate: 0.05,
        }
    }
}

/// Forecast errors on the case II horizon `n_obs..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastScores {
    /// Field-level SMSE of the closed-loop rollout.
    pub closed_loop_smse: f64,
    /// Field-level SMSE of one-step predictions from true windows.
    pub open_loop_smse: f64,
    /// Closed-loop SMSE of each mode's coefficient series.
    pub mode_smse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub seed: u64,
    pub horizon: usize,
    pub multi_task: ForecastScores,
    pub single_task_gp: ForecastScores,
    /// `T × R` closed-loop coefficients of case II from the multi-task
    /// model (observed rows copied).
    pub multi_task_coeffs: Vec<Vec<f64>>,
}

/// One-step predictor of a single coefficient series.
trait StepModel {
    fn predict(&mut self, window: &[f64]) -> Result<f64>;
}

struct MultiTaskStep<'a> {
    state: crate::model::ModelState<f64>,
    norm: crate::data::Normalization<f64>,
    n_samples: usize,
    rng: &'a mut RngStream,
}

impl StepModel for MultiTaskStep<'_> {
    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        let x = DenseMatrix::from_rows(&[window.to_vec()])?;
        Ok(predict_raw(&self.state, &self.norm, &x, self.n_samples, self.rng)?[0][1].mean)
    }
}

struct GpStep {
    model: ExactGpModel<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
}

impl StepModel for GpStep {
    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        let x: Vec<f64> = window.iter().enumerate().map(|(j, v)| (v - self.x_mean[j]) / self.x_sd[j]).collect();
        Ok(gp_predict(&self.model, &x)?.0 * self.y_sd + self.y_mean)
    }
}

fn standardize(v: &[f64]) -> (f64, f64) {
    let (m, var) = mean_and_var(v);
    (m, if var > 0.0 { var.sqrt() } else { 1.0 })
}

fn fit_baseline(x: &DenseMatrix<f64>, y: &[f64], cfg: &ForecastConfig) -> Result<GpStep> {
    let d = x.cols();
    let ls = cfg.model.length_scale_init;
    let (x_mean, x_sd): (Vec<f64>, Vec<f64>) = (0..d).map(|j| standardize(&x.column(j))).unzip();
    let (y_mean, y_sd) = standardize(y);
    let xs = DenseMatrix::from_fn(x.rows(), d, |i, j| (x[(i, j)] - x_mean[j]) / x_sd[j]);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_sd).collect();
    let kernel = KernelParams::isotropic(d, 1.0, ls);
    let model = fit_exact_gp(ExactGpModel::new(kernel, 0.1, xs, ys)?, cfg.baseline_iterations, cfg.baseline_learning_rate)?;
    Ok(GpStep { model, x_mean, x_sd, y_mean, y_sd })
}

/// Feeds predictions back as inputs from `start` to the end of `truth`.
fn closed_loop(model: &mut dyn StepModel, truth: &[f64], start: usize, window: usize) -> Result<Vec<f64>> {
    let mut series = truth[..start].to_vec();
    for t in start..truth.len() {
        let next = model.predict(&series[t - window..t])?;
        series.push(next);
    }
    Ok(series)
}

/// One-step predictions from true windows for `start..T`.
fn open_loop(model: &mut dyn StepModel, truth: &[f64], start: usize, window: usize) -> Result<Vec<f64>> {
    let mut series = truth[..start].to_vec();
    for t in start..truth.len() {
        series.push(model.predict(&truth[t - window..t])?);
    }
    Ok(series)
}

/// Field SMSE over snapshots `start..T` of coefficient trajectories
/// `coeffs[k][t]`, normalized by the variance of the observed case II field.
fn field_smse(modes: &DenseMatrix<f64>, coeffs: &[Vec<f64>], truth: &SnapshotMatrix<f64>, start: usize) -> f64 {
    let n_mesh = truth.n_mesh();
    let observed: Vec<f64> = (0..start).flat_map(|t| truth.snapshot(t)).collect();
    let (_, var) = mean_and_var(&observed);
    let mut se = 0.0;
    for t in start..truth.n_time() {
        for i in 0..n_mesh {
            let field: f64 = (0..coeffs.len()).map(|k| modes[(i, k)] * coeffs[k][t]).sum();
            let r = field - truth.values()[(i, t)];
            se += r * r;
        }
    }
    se / ((truth.n_time() - start) * n_mesh) as f64 / var
}

fn series_smse(pred: &[f64], truth: &[f64], start: usize) -> f64 {
    let (_, var) = mean_and_var(&truth[..start]);
    let h = truth.len() - start;
    (start..truth.len()).map(|t| (pred[t] - truth[t]).powi(2)).sum::<f64>() / h as f64 / var.max(f64::MIN_POSITIVE)
}

/// Forecasts case II from its first `n_obs` snapshots.
pub fn forecast_cases(case1: &SnapshotMatrix<f64>, case2: &SnapshotMatrix<f64>, cfg: &ForecastConfig, seed: u64) -> Result<ForecastResult> {
    if case1.n_mesh() != case2.n_mesh() {
        return Err(Error::SchemaMismatch(format!("cases have {} and {} mesh nodes", case1.n_mesh(), case2.n_mesh())));
    }
    let (t2, w) = (case2.n_time(), cfg.window);
    if cfg.n_obs <= w || cfg.n_obs >= t2 {
        return Err(Error::Config(format!("n_obs must lie in ({w}, {t2}), got {}", cfg.n_obs)));
    }
    let basis = pod_decompose(case1, cfg.rank)?;
    let c2 = basis.project_all(case2)?;
    let mut rng = RngStream::new(seed, FORECAST_STREAM);
    let (mut mt_closed, mut mt_open, mut gp_closed, mut gp_open) = (vec![], vec![], vec![], vec![]);
    let mut truth_modes = vec![];
    for k in 0..cfg.rank {
        let s1 = basis.coeffs.column(k);
        let s2 = c2.column(k);
        let (x1, y1) = ar_windowing(&s1, w)?;
        let (x2, y2) = ar_windowing(&s2[..cfg.n_obs], w)?;
        let data = MultiTaskDataset::with_names(
            vec![TaskData::new(x1, y1)?, TaskData::new(x2.clone(), y2.clone())?],
            vec!["case_1".into(), "case_2".into()],
        )?;
        // both tasks are the same physical coefficient, and the few case II
        // targets give poor scale estimates, so they share case I's
        let mut norm = data.normalize()?.norm.expect("normalize stores statistics");
        norm.output_mean[1] = norm.output_mean[0];
        norm.output_std[1] = norm.output_std[0];
        let normalized = data.normalize_with(norm.clone());
        let mut spec = cfg.model.clone();
        let distinct = distinct_rows(&data.pooled_inputs()).rows();
        spec.m_per_latent = match cfg.inducing {
            InducingSize::All => distinct,
            InducingSize::Count(m) => m.min(distinct),
        };
        let mode_seed = seed.wrapping_mul(31).wrapping_add(k as u64);
        let state = build_model(&spec, &normalized, mode_seed)?;
        let (state, _) = train(state, &normalized, &TrainConfig { seed: mode_seed, ..cfg.train.clone() })?;
        let mut mt = MultiTaskStep { state, norm, n_samples: cfg.n_pred_samples, rng: &mut rng };
        mt_closed.push(closed_loop(&mut mt, &s2, cfg.n_obs, w)?);
        mt_open.push(open_loop(&mut mt, &s2, cfg.n_obs, w)?);

        let mut gp = fit_baseline(&x2, &y2, cfg)?;
        gp_closed.push(closed_loop(&mut gp, &s2, cfg.n_obs, w)?);
        gp_open.push(open_loop(&mut gp, &s2, cfg.n_obs, w)?);
        truth_modes.push(s2);
    }
    let scores = |closed: &[Vec<f64>], open: &[Vec<f64>]| ForecastScores {
        closed_loop_smse: field_smse(&basis.modes, closed, case2, cfg.n_obs),
        open_loop_smse: field_smse(&basis.modes, open, case2, cfg.n_obs),
        mode_smse: closed.iter().zip(&truth_modes).map(|(p, t)| series_smse(p, t, cfg.n_obs)).collect(),
    };
    Ok(ForecastResult {
        seed,
        horizon: t2 - cfg.n_obs,
        multi_task: scores(&mt_closed, &mt_open),
        single_task_gp: scores(&gp_closed, &gp_open),
        multi_task_coeffs: (0..t2).map(|t| mt_closed.iter().map(|s| s[t]).collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pod::{synthetic_two_cases, SyntheticSnapshots};

    struct Persist;

    impl StepModel for Persist {
        fn predict(&mut self, window: &[f64]) -> Result<f64> {
            Ok(*window.last().unwrap())
        }
    }

    #[test]
    fn rollouts_keep_observed_prefix() {
        let truth: Vec<f64> = (0..15).map(|t| t as f64).collect();
        let c = closed_loop(&mut Persist, &truth, 12, 3).unwrap();
        assert_eq!(&c[..12], &truth[..12]);
        assert_eq!(&c[12..], &[11.0, 11.0, 11.0]);
        let o = open_loop(&mut Persist, &truth, 12, 3).unwrap();
        assert_eq!(&o[12..], &[11.0, 12.0, 13.0]);
        assert!(series_smse(&o, &truth, 12) > 0.0);
    }

    #[test]
    fn exact_coefficients_give_noise_level_field_error() {
        let (a, b) = synthetic_two_cases::<f64>(&SyntheticSnapshots { n_mesh: 30, n_time: 40, rank: 3, noise_sd: 0.01 }, 2).unwrap();
        let basis = pod_decompose(&a, 3).unwrap();
        let c2 = basis.project_all(&b).unwrap();
        let coeffs: Vec<Vec<f64>> = (0..3).map(|k| c2.column(k)).collect();
        assert!(field_smse(&basis.modes, &coeffs, &b, 20) < 1e-3);
    }

    #[test]
    fn short_run_is_finite_and_validated() {
        let (a, b) = synthetic_two_cases::<f64>(&SyntheticSnapshots { n_mesh: 20, n_time: 30, rank: 2, noise_sd: 0.01 }, 1).unwrap();
        let mut cfg = ForecastConfig { rank: 2, window: 3, n_obs: 10, n_pred_samples: 4, baseline_iterations: 20, ..Default::default() };
        cfg.train.iterations = 10;
        let r = forecast_cases(&a, &b, &cfg, 0).unwrap();
        assert_eq!(r.horizon, 20);
        assert!(r.multi_task.closed_loop_smse.is_finite() && r.single_task_gp.closed_loop_smse.is_finite());
        assert_eq!(r.multi_task_coeffs.len(), 30);
        assert_eq!(forecast_cases(&a, &b, &cfg, 0).unwrap(), r);
        cfg.n_obs = 3;
        assert!(matches!(forecast_cases(&a, &b, &cfg, 0), Err(Error::Config(_))));
    }
}
