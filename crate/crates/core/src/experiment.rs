//! Repeated train / predict / evaluate runs and their on-disk result bundle.
//!
//! Configuration comes in layers: built-in per-dataset defaults, then a
//! config file, then command-line flags, each overriding the previous one.
//! The fully resolved configuration is written into every bundle so a run
//! can be reproduced from its bundle alone.
//!
//! Bundle layout under `output_dir`:
//!
//! ```text
//! config.json                 resolved configuration
//! seed-<s>/metrics.json       per-task metrics of that seed
//! seed-<s>/trace.csv          training objective trace
//! seed-<s>/curves.csv         predictive curves (one-dimensional inputs only)
//! seed-<s>/checkpoint.json    trained parameters
//! summary.json, summary.md    mean ± sample std over seeds
//! ```

use crate::checkpoint::Checkpoint;
use crate::data::{gen_toy, mean_and_var, read_canonical_csv, toy_test_grid, MultiTaskDataset, Normalization, TaskData, TOY_DOMAIN};
use crate::elbo::VarianceMode;
use crate::error::{Error, Result};
use crate::kernels::{DEFAULT_LENGTH_SCALE, SARCOS_LENGTH_SCALE};
use crate::metrics::{compute_metrics, TaskMetrics};
use crate::model::{build_model, ModelSpec, ModelState, Variant};
use crate::neural::Activation;
use crate::numerics::{DenseMatrix, RngStream};
use crate::predict::{predict_batch, PredictiveSummary, DEFAULT_PRED_SAMPLES};
use crate::sparse::distinct_rows;
use crate::splits::{load_split, SplitName};
use crate::train::{train, Trace, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Stream id of the prediction RNG.
const PREDICT_STREAM: u64 = 11;
/// Points of the noiseless toy evaluation grid.
pub const TOY_GRID_POINTS: usize = 500;

/// Number of inducing inputs per latent GP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InducingSize {
    Count(usize),
    /// Every distinct training input.
    #[serde(with = "all_marker")]
    All,
}

mod all_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let v = String::deserialize(d)?;
        if v == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected a count or \"all\", got \"{v}\"")))
        }
    }
}

impl std::str::FromStr for InducingSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::Count)
            .map_err(|_| Error::Config(format!("inducing size must be a count or `all`, got `{s}`")))
    }
}

/// Where the data of a run comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Toy,
    Jura,
    Eeg,
    SarcosA,
    SarcosB,
    SarcosC,
    /// Canonical CSV files given by `train_csv` / `test_csv`.
    Csv,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Jura => "jura",
            Self::Eeg => "eeg",
            Self::SarcosA => "sarcos_a",
            Self::SarcosB => "sarcos_b",
            Self::SarcosC => "sarcos_c",
            Self::Csv => "csv",
        }
    }

    fn split(self) -> Option<SplitName> {
        match self {
            Self::Jura => Some(SplitName::Jura),
            Self::Eeg => Some(SplitName::Eeg),
            Self::SarcosA => Some(SplitName::SarcosA),
            Self::SarcosB => Some(SplitName::SarcosB),
            Self::SarcosC => Some(SplitName::SarcosC),
            Self::Toy | Self::Csv => None,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Toy, Self::Jura, Self::Eeg, Self::SarcosA, Self::SarcosB, Self::SarcosC, Self::Csv]
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown dataset `{s}`")))
    }
}

/// Per-dataset training settings used when neither file nor flags set them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseDefaults {
    pub q: usize,
    pub h: usize,
    pub inducing: InducingSize,
    pub iterations: usize,
    pub minibatch: usize,
    pub length_scale: f64,
}

pub fn case_defaults(kind: DatasetKind) -> CaseDefaults {
    let base = CaseDefaults {
        q: 2,
        h: 20,
        inducing: InducingSize::All,
        iterations: 10_000,
        minibatch: 32,
        length_scale: DEFAULT_LENGTH_SCALE,
    };
    let sarcos = CaseDefaults {
        h: 10,
        inducing: InducingSize::Count(100),
        iterations: 20_000,
        length_scale: SARCOS_LENGTH_SCALE,
        ..base
    };
    match kind {
        DatasetKind::Toy => CaseDefaults { h: 100, inducing: InducingSize::Count(25), ..base },
        DatasetKind::Jura => base,
        DatasetKind::Eeg => CaseDefaults { q: 4, minibatch: 64, ..base },
        DatasetKind::SarcosA | DatasetKind::SarcosB => sarcos,
        DatasetKind::SarcosC => CaseDefaults { h: 100, ..sarcos },
        DatasetKind::Csv => CaseDefaults { inducing: InducingSize::Count(100), ..base },
    }
}

/// Settings of the POD forecasting pipeline's two-task models.
pub fn fluidized_defaults() -> CaseDefaults {
    CaseDefaults {
        q: 2,
        h: 10,
        inducing: InducingSize::Count(500),
        iterations: 10_000,
        minibatch: 32,
        length_scale: DEFAULT_LENGTH_SCALE,
    }
}

/// One configuration layer; unset fields fall through to the layer below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub dataset: Option<DatasetKind>,
    pub data_dir: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub q: Option<usize>,
    pub h: Option<usize>,
    pub m: Option<InducingSize>,
    pub activation: Option<Activation>,
    pub length_scale_init: Option<f64>,
    pub noise_init: Option<f64>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub minibatch: Option<usize>,
    pub s_train: Option<usize>,
    pub log_every: Option<usize>,
    pub variance_mode: Option<VarianceMode>,
    pub freeze: Option<Vec<String>>,
    pub n_pred_samples: Option<usize>,
    pub n_repeats: Option<usize>,
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($low:expr, $high:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $high.$f.or($low.$f)),* }
    };
}

impl ConfigLayer {
    /// `self` with every field set in `top` replaced.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, top, dataset, data_dir, train_csv, test_csv, output_dir, variant, q, h, m, activation,
            length_scale_init, noise_init, learning_rate, iterations, minibatch, s_train, log_every,
            variance_mode, freeze, n_pred_samples, n_repeats, seed
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub inducing: InducingSize,
    pub train: TrainConfig,
    pub n_pred_samples: usize,
    pub n_repeats: usize,
    /// Seed of the first repeat; repeat `r` uses `seed + r`.
    pub seed: u64,
}

impl RunConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<Self> {
        let dataset = layer.dataset.unwrap_or(DatasetKind::Toy);
        let d = case_defaults(dataset);
        let variant = layer.variant.unwrap_or(Variant::Nsvlmc);
        let inducing = layer.m.unwrap_or(d.inducing);
        let model = ModelSpec {
            variant,
            q: layer.q.unwrap_or(d.q),
            h: layer.h.unwrap_or(d.h),
            // replaced by the data-dependent count for `all` at run time
            m_per_latent: match inducing {
                InducingSize::Count(m) => m,
                InducingSize::All => usize::MAX,
            },
            activation: layer.activation.unwrap_or_default(),
            length_scale_init: layer.length_scale_init.unwrap_or(d.length_scale),
            noise_init: layer.noise_init.unwrap_or(crate::model::DEFAULT_NOISE_INIT),
            ..ModelSpec::default()
        };
        let seed = layer.seed.unwrap_or(0);
        let train = TrainConfig {
            learning_rate: layer.learning_rate.unwrap_or(crate::train::DEFAULT_LEARNING_RATE),
            iterations: layer.iterations.unwrap_or(d.iterations),
            minibatch: layer.minibatch.unwrap_or(d.minibatch),
            s_train: layer.s_train.unwrap_or(crate::train::DEFAULT_S_TRAIN),
            seed,
            log_every: layer.log_every.unwrap_or(100),
            variance_mode: layer.variance_mode.unwrap_or_default(),
            freeze: layer.freeze.unwrap_or_default(),
        };
        let output_dir = layer
            .output_dir
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", dataset.as_str(), variant.as_str())));
        let cfg = Self {
            dataset,
            data_dir: layer.data_dir,
            train_csv: layer.train_csv,
            test_csv: layer.test_csv,
            output_dir,
            model,
            inducing,
            train,
            n_pred_samples: layer.n_pred_samples.unwrap_or(DEFAULT_PRED_SAMPLES),
            n_repeats: layer.n_repeats.unwrap_or(10),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be at least 1".into()));
        }
        if self.n_pred_samples < 2 {
            return Err(Error::Config("n_pred_samples must be at least 2".into()));
        }
        if self.inducing == InducingSize::Count(0) {
            return Err(Error::Config("m must be at least 1".into()));
        }
        match self.dataset {
            DatasetKind::Csv if self.train_csv.is_none() => {
                return Err(Error::Config("dataset `csv` needs train_csv".into()))
            }
            k if k.split().is_some() && self.data_dir.is_none() => {
                return Err(Error::Config(format!("dataset `{}` needs data_dir", k.as_str())))
            }
            _ => {}
        }
        self.train.validate()?;
        let mut spec = self.model.clone();
        spec.m_per_latent = spec.m_per_latent.max(1);
        spec.validate()
    }

    /// Seed of repeat `r`.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        self.seed + r as u64
    }
}

/// Raw-unit training data and per-task held-out sets (empty when a task
/// has none).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: MultiTaskDataset<f64>,
    pub test: Vec<TaskData<f64>>,
}

/// Loads the data of one repeat. Toy data is regenerated from the repeat
/// seed; every other source is fixed.
pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<ExperimentData> {
    match cfg.dataset {
        DatasetKind::Toy => Ok(ExperimentData {
            train: gen_toy(seed),
            test: toy_test_grid(TOY_GRID_POINTS, TOY_DOMAIN.0, TOY_DOMAIN.1),
        }),
        DatasetKind::Csv => {
            let path = cfg.train_csv.as_ref().ok_or_else(|| Error::Config("train_csv not set".into()))?;
            let train = MultiTaskDataset::new(read_canonical_csv(path)?)?;
            let mut test = match &cfg.test_csv {
                Some(p) => read_canonical_csv(p)?,
                None => Vec::new(),
            };
            if test.len() > train.n_tasks() {
                return Err(Error::SchemaMismatch(format!(
                    "test file has {} tasks, training file {}",
                    test.len(),
                    train.n_tasks()
                )));
            }
            test.resize_with(train.n_tasks(), || TaskData::empty(train.input_dim()));
            if test.iter().any(|t| t.x.cols() != train.input_dim()) {
                return Err(Error::SchemaMismatch("test inputs have a different dimension".into()));
            }
            Ok(ExperimentData { train, test })
        }
        kind => {
            let dir = cfg.data_dir.as_ref().ok_or_else(|| Error::Config("data_dir not set".into()))?;
            let split = load_split(kind.split().expect("built-in split"), dir)?;
            Ok(ExperimentData { train: split.train, test: split.test })
        }
    }
}

/// Everything one repeat produces.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub state: ModelState<f64>,
    pub normalization: Normalization<f64>,
    pub trace: Trace,
    pub metrics: Vec<TaskMetrics>,
    /// Raw-unit predictive summaries at each task's test inputs.
    pub predictions: Vec<Vec<PredictiveSummary<f64>>>,
}

/// Model spec with `m = all` replaced by the number of distinct inputs.
pub fn resolved_spec(cfg: &RunConfig, data: &MultiTaskDataset<f64>) -> ModelSpec {
    let mut spec = cfg.model.clone();
    if cfg.inducing == InducingSize::All {
        spec.m_per_latent = distinct_rows(&data.pooled_inputs()).rows();
    }
    spec
}

/// Raw-unit predictions of a trained model at raw-unit inputs `xs`:
/// `out[i][c]`.
pub fn predict_raw(
    state: &ModelState<f64>,
    norm: &Normalization<f64>,
    xs: &DenseMatrix<f64>,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<PredictiveSummary<f64>>>> {
    let pred = predict_batch(state, &norm.normalize_inputs(xs), n_samples, rng)?;
    Ok(pred
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(c, p)| PredictiveSummary {
                    mean: norm.denormalize_output(c, p.mean),
                    var: norm.denormalize_variance(c, p.var),
                    n_samples: p.n_samples,
                })
                .collect()
        })
        .collect())
}

/// Per-task predictions at each task's own test inputs; tasks whose test
/// inputs coincide share one prediction pass.
pub fn predict_test_sets(
    state: &ModelState<f64>,
    norm: &Normalization<f64>,
    test: &[TaskData<f64>],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<PredictiveSummary<f64>>>> {
    let mut cache: Vec<(&DenseMatrix<f64>, Vec<Vec<PredictiveSummary<f64>>>)> = Vec::new();
    let mut out = Vec::with_capacity(test.len());
    for (c, t) in test.iter().enumerate() {
        if t.is_empty() {
            out.push(Vec::new());
            continue;
        }
        let idx = match cache.iter().position(|(x, _)| *x == &t.x) {
            Some(i) => i,
            None => {
                cache.push((&t.x, predict_raw(state, norm, &t.x, n_samples, rng)?));
                cache.len() - 1
            }
        };
        out.push(cache[idx].1.iter().map(|row| row[c]).collect());
    }
    Ok(out)
}

/// Trains and evaluates one repeat.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    let data = load_data(cfg, seed)?;
    let normalized = data.train.normalize()?;
    let norm = normalized.norm.clone().expect("normalize stores statistics");
    let spec = resolved_spec(cfg, &data.train);
    let state = build_model(&spec, &normalized, seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let (state, trace) = train(state, &normalized, &train_cfg)?;

    let mut rng = RngStream::new(seed, PREDICT_STREAM);
    let predictions = predict_test_sets(&state, &norm, &data.test, cfg.n_pred_samples, &mut rng)?;
    let train_vars = data.train.output_variances();
    let mut metrics = Vec::new();
    for (c, t) in data.test.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let (mae, smse, nll) = compute_metrics(&predictions[c], &t.y, train_vars[c])?;
        metrics.push(TaskMetrics { task: data.train.task_names[c].clone(), mae, smse, nll, n_test: t.len(), seed });
    }
    Ok(SeedResult { seed, state, normalization: norm, trace, metrics, predictions })
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let (mean, pop) = mean_and_var(v);
        let std = if n > 1 { (pop * n as f64 / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub n_seeds: usize,
    pub mae: MeanStd,
    pub smse: MeanStd,
    pub nll: MeanStd,
}

/// Per-task aggregation over seeds, in order of first appearance.
pub fn aggregate(per_seed: &[Vec<TaskMetrics>]) -> Vec<AggregateRow> {
    let mut tasks: Vec<String> = Vec::new();
    for m in per_seed.iter().flatten() {
        if !tasks.contains(&m.task) {
            tasks.push(m.task.clone());
        }
    }
    tasks
        .into_iter()
        .map(|task| {
            let rows: Vec<&TaskMetrics> = per_seed.iter().flatten().filter(|m| m.task == task).collect();
            let col = |f: fn(&TaskMetrics) -> f64| MeanStd::of(&rows.iter().map(|m| f(m)).collect::<Vec<_>>());
            AggregateRow {
                n_seeds: rows.len(),
                mae: col(|m| m.mae),
                smse: col(|m| m.smse),
                nll: col(|m| m.nll),
                task,
            }
        })
        .collect()
}

/// Markdown table of aggregated metrics.
pub fn summary_table(rows: &[AggregateRow]) -> String {
    let mut s = String::from("| task | seeds | MAE | SMSE | NLL |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
            r.task, r.n_seeds, r.mae.mean, r.mae.std, r.smse.mean, r.smse.std, r.nll.mean, r.nll.std
        );
    }
    s
}

/// `task,x,mean,var,lower,upper` rows for tasks with one-dimensional inputs.
pub fn curves_csv(names: &[String], test: &[TaskData<f64>], pred: &[Vec<PredictiveSummary<f64>>]) -> String {
    let mut s = String::from("task,x,mean,var,lower,upper\n");
    for (c, t) in test.iter().enumerate() {
        for (i, p) in pred[c].iter().enumerate() {
            let half = 1.96 * p.var.sqrt();
            let _ = writeln!(s, "{},{},{},{},{},{}", names[c], t.x[(i, 0)], p.mean, p.var, p.mean - half, p.mean + half);
        }
    }
    s
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed-{seed}"))
}

/// Writes one repeat's files into its seed directory.
pub fn write_seed(cfg: &RunConfig, res: &SeedResult) -> Result<()> {
    let dir = seed_dir(&cfg.output_dir, res.seed);
    std::fs::create_dir_all(&dir)?;
    let data = load_data(cfg, res.seed)?;
    write_atomic(&dir.join("metrics.json"), &serde_json::to_string_pretty(&res.metrics)?)?;
    write_atomic(&dir.join("trace.csv"), &res.trace.to_csv())?;
    if data.train.input_dim() == 1 {
        write_atomic(&dir.join("curves.csv"), &curves_csv(&data.train.task_names, &data.test, &res.predictions))?;
    }
    let ck = Checkpoint::from_state(
        &res.state,
        Some(res.normalization.clone()),
        data.train.task_names.clone(),
        serde_json::to_value(cfg)?,
    );
    ck.save(&dir.join("checkpoint.json"))
}

/// Reads every `seed-*/metrics.json` under `output_dir`, ordered by seed.
pub fn read_bundle_metrics(output_dir: &Path) -> Result<Vec<Vec<TaskMetrics>>> {
    if !output_dir.is_dir() {
        return Err(Error::MissingFile(output_dir.to_path_buf()));
    }
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(output_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) {
            let m = entry.path().join("metrics.json");
            if m.exists() {
                found.push((seed, m));
            }
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|(_, p)| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        .collect()
}

/// Writes `summary.json` and `summary.md` from the seed directories.
pub fn write_summary(output_dir: &Path) -> Result<Vec<AggregateRow>> {
    let rows = aggregate(&read_bundle_metrics(output_dir)?);
    write_atomic(&output_dir.join("summary.json"), &serde_json::to_string_pretty(&rows)?)?;
    write_atomic(&output_dir.join("summary.md"), &summary_table(&rows))?;
    Ok(rows)
}

/// Runs every repeat and writes the full bundle.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<AggregateRow>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    for r in 0..cfg.n_repeats {
        let seed = cfg.repeat_seed(r);
        log::info!("repeat {}/{} (seed {seed})", r + 1, cfg.n_repeats);
        let res = run_seed(cfg, seed)?;
        write_seed(cfg, &res)?;
    }
    write_summary(&cfg.output_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_table() {
        let d = case_defaults(DatasetKind::Eeg);
        assert_eq!((d.q, d.h, d.minibatch, d.inducing), (4, 20, 64, InducingSize::All));
        let c = case_defaults(DatasetKind::SarcosC);
        assert_eq!((c.h, c.iterations, c.inducing, c.length_scale), (100, 20_000, InducingSize::Count(100), 0.5));
        assert_eq!(case_defaults(DatasetKind::SarcosA).h, 10);
        assert_eq!(fluidized_defaults().inducing, InducingSize::Count(500));
        assert_eq!(case_defaults(DatasetKind::Toy).iterations, 10_000);
    }

    #[test]
    fn layers_override_in_order() {
        let file = ConfigLayer::from_toml("dataset = \"eeg\"\ndata_dir = \"d\"\nq = 3\niterations = 50\nm = \"all\"\n").unwrap();
        let flags = ConfigLayer { q: Some(5), ..Default::default() };
        let cfg = RunConfig::resolve(ConfigLayer::default().overlay(file).overlay(flags)).unwrap();
        assert_eq!(cfg.model.q, 5);
        assert_eq!(cfg.train.iterations, 50);
        assert_eq!(cfg.train.minibatch, 64);
        assert_eq!(cfg.inducing, InducingSize::All);
        assert!(ConfigLayer::from_toml("bogus = 1").is_err());
        assert!(ConfigLayer::from_toml("m = \"some\"").is_err());
        assert_eq!(ConfigLayer::from_toml("m = 7").unwrap().m, Some(InducingSize::Count(7)));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::resolve(ConfigLayer::default()).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let need_dir = ConfigLayer { dataset: Some(DatasetKind::Jura), ..Default::default() };
        assert!(matches!(RunConfig::resolve(need_dir), Err(Error::Config(_))));
        let zero = ConfigLayer { n_repeats: Some(0), ..Default::default() };
        assert!(RunConfig::resolve(zero).is_err());
    }

    #[test]
    fn sample_std_convention() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[2.0]).std, 0.0);
    }

    #[test]
    fn tiny_run_writes_bundle_deterministically() {
        let dir = std::env::temp_dir().join(format!("mtgp-exp-{}", std::process::id()));
        let layer = ConfigLayer {
            variant: Some(Variant::Svlmc),
            q: Some(1),
            m: Some(InducingSize::Count(5)),
            iterations: Some(20),
            log_every: Some(5),
            n_repeats: Some(2),
            n_pred_samples: Some(4),
            output_dir: Some(dir.clone()),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(layer).unwrap();
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].n_seeds, 2);
        let first = std::fs::read_to_string(seed_dir(&dir, 1).join("metrics.json")).unwrap();
        for f in ["config.json", "summary.json", "summary.md"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        for f in ["trace.csv", "curves.csv", "checkpoint.json"] {
            assert!(seed_dir(&dir, 0).join(f).exists(), "{f}");
        }
        run_experiment(&cfg).unwrap();
        assert_eq!(std::fs::read_to_string(seed_dir(&dir, 1).join("metrics.json")).unwrap(), first);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
