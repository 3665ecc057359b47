//! Multi-task datasets, normalization, the synthetic three-task toy problem,
//! and the canonical CSV format.
//!
//! Canonical CSV layout: a header `task,x_0,...,x_{D-1},y` followed by one row
//! per observation. `task` is a zero-based task index; rows of one task need
//! not be contiguous but their relative order is preserved.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RngStream};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Inputs and targets of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData<T> {
    pub x: DenseMatrix<T>,
    pub y: Vec<T>,
}

impl<T: Real> TaskData<T> {
    pub fn new(x: DenseMatrix<T>, y: Vec<T>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::SizeMismatch(format!("{} inputs vs {} targets", x.rows(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn empty(dim: usize) -> Self {
        Self { x: DenseMatrix::zeros(0, dim), y: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Per-dimension input statistics (pooled over tasks) and per-task output statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub input_mean: Vec<T>,
    pub input_std: Vec<T>,
    pub output_mean: Vec<T>,
    pub output_std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn identity(dim: usize, tasks: usize) -> Self {
        Self {
            input_mean: vec![T::zero(); dim],
            input_std: vec![T::one(); dim],
            output_mean: vec![T::zero(); tasks],
            output_std: vec![T::one(); tasks],
        }
    }

    pub fn normalize_inputs(&self, x: &DenseMatrix<T>) -> DenseMatrix<T> {
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.input_mean[j]) / self.input_std[j]
        })
    }

    pub fn denormalize_inputs(&self, x: &DenseMatrix<T>) -> DenseMatrix<T> {
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            x[(i, j)] * self.input_std[j] + self.input_mean[j]
        })
    }

    pub fn normalize_output(&self, task: usize, y: T) -> T {
        (y - self.output_mean[task]) / self.output_std[task]
    }

    pub fn denormalize_output(&self, task: usize, y: T) -> T {
        y * self.output_std[task] + self.output_mean[task]
    }

    pub fn denormalize_variance(&self, task: usize, var: T) -> T {
        var * self.output_std[task] * self.output_std[task]
    }
}

/// Heterotopic multi-task training data.
///
/// Tasks are stacked in task order wherever a single pooled view is needed;
/// that ordering is part of the data contract.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset<T> {
    pub tasks: Vec<TaskData<T>>,
    pub task_names: Vec<String>,
    /// Statistics of the transform already applied, if any.
    pub norm: Option<Normalization<T>>,
}

impl<T: Real> MultiTaskDataset<T> {
    pub fn new(tasks: Vec<TaskData<T>>) -> Result<Self> {
        let names = (0..tasks.len()).map(|c| format!("task{c}")).collect();
        Self::with_names(tasks, names)
    }

    pub fn with_names(tasks: Vec<TaskData<T>>, task_names: Vec<String>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::SizeMismatch("dataset has no tasks".into()));
        }
        if task_names.len() != tasks.len() {
            return Err(Error::SizeMismatch("one name per task required".into()));
        }
        let d = tasks[0].x.cols();
        for (c, t) in tasks.iter().enumerate() {
            if t.x.cols() != d {
                return Err(Error::SchemaMismatch(format!(
                    "task {c} has input dimension {} (expected {d})",
                    t.x.cols()
                )));
            }
            if t.is_empty() {
                return Err(Error::SizeMismatch(format!("task {c} has no observations")));
            }
        }
        Ok(Self { tasks, task_names, norm: None })
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].x.cols()
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskData::len).collect()
    }

    pub fn total_points(&self) -> usize {
        self.tasks.iter().map(TaskData::len).sum()
    }

    /// All inputs stacked in task order.
    pub fn pooled_inputs(&self) -> DenseMatrix<T> {
        let blocks: Vec<&DenseMatrix<T>> = self.tasks.iter().map(|t| &t.x).collect();
        DenseMatrix::vstack(&blocks).expect("tasks share input dimension")
    }

    /// All targets stacked in task order.
    pub fn pooled_targets(&self) -> Vec<T> {
        self.tasks.iter().flat_map(|t| t.y.iter().copied()).collect()
    }

    /// Task index of every stacked row.
    pub fn pooled_task_index(&self) -> Vec<usize> {
        self.tasks.iter().enumerate().flat_map(|(c, t)| std::iter::repeat_n(c, t.len())).collect()
    }

    /// Population variance of each task's targets.
    pub fn output_variances(&self) -> Vec<T> {
        self.tasks.iter().map(|t| mean_and_var(&t.y).1).collect()
    }

    /// Zero-mean, unit-variance inputs (pooled per dimension) and outputs
    /// (per task). Statistics are stored in `norm` of the returned dataset.
    pub fn normalize(&self) -> Result<Self> {
        let d = self.input_dim();
        let pooled = self.pooled_inputs();
        let mut input_mean = Vec::with_capacity(d);
        let mut input_std = Vec::with_capacity(d);
        for j in 0..d {
            let (m, v) = mean_and_var(&pooled.column(j));
            let s = v.sqrt();
            if !(s > T::zero()) {
                return Err(Error::ZeroVariance { column: format!("x_{j}") });
            }
            input_mean.push(m);
            input_std.push(s);
        }
        let mut output_mean = Vec::new();
        let mut output_std = Vec::new();
        for (c, t) in self.tasks.iter().enumerate() {
            let (m, v) = mean_and_var(&t.y);
            let s = v.sqrt();
            if !(s > T::zero()) {
                return Err(Error::ZeroVariance { column: format!("{} (y)", self.task_names[c]) });
            }
            output_mean.push(m);
            output_std.push(s);
        }
        Ok(self.normalize_with(Normalization { input_mean, input_std, output_mean, output_std }))
    }

    /// Applies given statistics instead of estimating them.
    pub fn normalize_with(&self, norm: Normalization<T>) -> Self {
        let tasks = self
            .tasks
            .iter()
            .enumerate()
            .map(|(c, t)| TaskData {
                x: norm.normalize_inputs(&t.x),
                y: t.y.iter().map(|&y| norm.normalize_output(c, y)).collect(),
            })
            .collect();
        Self { tasks, task_names: self.task_names.clone(), norm: Some(norm) }
    }

    /// Inverse of [`normalize`](Self::normalize); identity if not normalized.
    pub fn denormalize(&self) -> Self {
        let Some(norm) = &self.norm else { return self.clone() };
        let tasks = self
            .tasks
            .iter()
            .enumerate()
            .map(|(c, t)| TaskData {
                x: norm.denormalize_inputs(&t.x),
                y: t.y.iter().map(|&y| norm.denormalize_output(c, y)).collect(),
            })
            .collect();
        Self { tasks, task_names: self.task_names.clone(), norm: None }
    }

    /// Keeps the given rows of each task.
    pub fn subset(&self, rows: &[Vec<usize>]) -> Result<Self> {
        let tasks = self
            .tasks
            .iter()
            .zip(rows)
            .map(|(t, idx)| TaskData { x: t.x.select_rows(idx), y: idx.iter().map(|&i| t.y[i]).collect() })
            .collect();
        let mut out = Self::with_names(tasks, self.task_names.clone())?;
        out.norm = self.norm.clone();
        Ok(out)
    }
}

/// Mean and population variance.
pub fn mean_and_var<T: Real>(v: &[T]) -> (T, T) {
    if v.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::lit(v.len() as f64);
    let m = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
    (m, var)
}

/// Mixing weights of the toy problem: row = task, column = latent function.
pub const TOY_MIXING: [[f64; 4]; 3] =
    [[0.5, -0.4, 0.6, 0.6], [-0.3, 0.43, -0.5, 0.1], [1.5, 0.0, 0.3, 0.6]];
pub const TOY_NOISE_VAR: f64 = 0.04;
/// Training points per task of the toy problem.
pub const TOY_SIZES: [usize; 3] = [100, 10, 100];
pub const TOY_DOMAIN: (f64, f64) = (-5.0, 5.0);

/// The four latent functions of the toy problem.
pub fn toy_latents(x: f64) -> [f64; 4] {
    [
        0.5 * (3.0 * x).sin() + x,
        3.0 * x.cos() - x,
        2.5 * (5.0 * x - 1.0).cos(),
        (1.5 * x).sin(),
    ]
}

/// Noiseless response of toy task `task` at `x`.
pub fn toy_response(task: usize, x: f64) -> f64 {
    let f = toy_latents(x);
    TOY_MIXING[task].iter().zip(f).map(|(a, f)| a * f).sum()
}

/// Three heterotopic toy tasks sharing four latent functions; inputs of each
/// task are independent uniform draws on `[-5, 5]`.
pub fn gen_toy<T: Real>(seed: u64) -> MultiTaskDataset<T> {
    let mut rng = RngStream::new(seed, 0x70f);
    let noise_sd = TOY_NOISE_VAR.sqrt();
    let tasks = TOY_SIZES
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let xs: Vec<f64> = (0..n).map(|_| rng.uniform(TOY_DOMAIN.0, TOY_DOMAIN.1)).collect();
            let ys: Vec<T> = xs
                .iter()
                .map(|&x| T::lit(toy_response(c, x) + noise_sd * rng.normal::<f64>()))
                .collect();
            TaskData { x: DenseMatrix::column_vector(xs.into_iter().map(T::lit).collect()), y: ys }
        })
        .collect();
    MultiTaskDataset::with_names(tasks, vec!["y1".into(), "y2".into(), "y3".into()])
        .expect("toy dataset is well formed")
}

/// Noiseless evaluation grid of the toy tasks over `[lo, hi]`.
pub fn toy_test_grid<T: Real>(n: usize, lo: f64, hi: f64) -> Vec<TaskData<T>> {
    let xs: Vec<f64> =
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect();
    (0..3)
        .map(|c| TaskData {
            x: DenseMatrix::column_vector(xs.iter().map(|&x| T::lit(x)).collect()),
            y: xs.iter().map(|&x| T::lit(toy_response(c, x))).collect(),
        })
        .collect()
}

pub fn write_canonical_csv<T: Real>(tasks: &[TaskData<T>], path: &Path) -> Result<()> {
    std::fs::write(path, canonical_csv_string(tasks))?;
    Ok(())
}

pub fn canonical_csv_string<T: Real>(tasks: &[TaskData<T>]) -> String {
    let d = tasks.first().map_or(0, |t| t.x.cols());
    let mut out = String::from("task");
    for j in 0..d {
        let _ = write!(out, ",x_{j}");
    }
    out.push_str(",y\n");
    for (c, t) in tasks.iter().enumerate() {
        for i in 0..t.len() {
            let _ = write!(out, "{c}");
            for &v in t.x.row(i) {
                let _ = write!(out, ",{}", v.as_f64());
            }
            let _ = writeln!(out, ",{}", t.y[i].as_f64());
        }
    }
    out
}

/// Reads a canonical CSV into per-task blocks (tasks `0..=max index`).
pub fn read_canonical_csv<T: Real>(path: &Path) -> Result<Vec<TaskData<T>>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_canonical_csv(&std::fs::read_to_string(path)?)
}

pub fn parse_canonical_csv<T: Real>(text: &str) -> Result<Vec<TaskData<T>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::SchemaMismatch("empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let d = header.len().checked_sub(2).ok_or_else(|| Error::SchemaMismatch("too few columns".into()))?;
    let expected: Vec<String> = std::iter::once("task".to_string())
        .chain((0..d).map(|j| format!("x_{j}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if header != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::SchemaMismatch(format!(
            "header {:?}, expected {:?}",
            header, expected
        )));
    }
    let mut rows: Vec<(usize, Vec<T>, T)> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 2 {
            return Err(Error::SchemaMismatch(format!("row {} has {} fields", ln + 2, fields.len())));
        }
        let task: usize = fields[0]
            .parse()
            .map_err(|_| Error::SchemaMismatch(format!("row {}: bad task index", ln + 2)))?;
        let nums: Result<Vec<f64>> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::SchemaMismatch(format!("row {}: bad number `{f}`", ln + 2)))
            })
            .collect();
        let nums = nums?;
        rows.push((task, nums[..d].iter().map(|&v| T::lit(v)).collect(), T::lit(nums[d])));
    }
    let n_tasks = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut tasks = Vec::with_capacity(n_tasks);
    for c in 0..n_tasks {
        let mine: Vec<&(usize, Vec<T>, T)> = rows.iter().filter(|r| r.0 == c).collect();
        let x = DenseMatrix::from_rows(&mine.iter().map(|r| r.1.clone()).collect::<Vec<_>>())
            .unwrap_or_else(|_| DenseMatrix::zeros(0, d));
        let x = if mine.is_empty() { DenseMatrix::zeros(0, d) } else { x };
        tasks.push(TaskData { x, y: mine.iter().map(|r| r.2).collect() });
    }
    Ok(tasks)
}
