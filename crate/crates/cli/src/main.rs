use clap::{Args, Parser, Subcommand};
use mtgp::checkpoint::Checkpoint;
use mtgp::data::{canonical_csv_string, gen_toy, read_canonical_csv, toy_test_grid, TOY_DOMAIN};
use mtgp::elbo::VarianceMode;
use mtgp::error::{Error, ErrorKind};
use mtgp::experiment::{
    predict_raw, predict_test_sets, run_experiment, summary_table, write_summary, ConfigLayer, DatasetKind,
    InducingSize, RunConfig, TOY_GRID_POINTS,
};
use mtgp::forecast::{forecast_cases, ForecastConfig};
use mtgp::metrics::{compute_metrics, TaskMetrics};
use mtgp::model::Variant;
use mtgp::neural::Activation;
use mtgp::numerics::{DenseMatrix, RngStream};
use mtgp::pod::{
    pod_decompose_with, read_snapshots_bin, read_snapshots_csv, synthetic_two_cases, SnapshotMatrix,
    SyntheticSnapshots,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Multi-task Gaussian process regression and forecasting.
#[derive(Parser)]
#[command(name = "mtgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the three-task toy data set as canonical CSV.
    ToyGen(ToyGenArgs),
    /// Train and evaluate over repeated seeds, writing a result bundle.
    Train(TrainArgs),
    /// Predict at new inputs from a checkpoint.
    Predict(PredictArgs),
    /// Score a checkpoint on a canonical test CSV.
    Evaluate(EvaluateArgs),
    /// POD of snapshot matrices and cross-case forecasting.
    #[command(subcommand)]
    Pod(PodCommand),
    /// Rebuild summary.json / summary.md of a result bundle.
    Report(ReportArgs),
}

#[derive(Args)]
struct ToyGenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the noiseless evaluation grid here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = TOY_GRID_POINTS)]
    grid_points: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with any of the run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// toy, jura, eeg, sarcos_a, sarcos_b, sarcos_c or csv.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// svlmc, nsvlmc, nmogp, ngprn or svlmc-dkl.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    /// Inducing inputs per latent GP, or `all`.
    #[arg(long)]
    m: Option<String>,
    /// tanh, relu or identity.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    length_scale_init: Option<f64>,
    #[arg(long)]
    noise_init: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    /// Importance samples of the training objective.
    #[arg(long)]
    s_train: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    /// exact_cross or paper_literal.
    #[arg(long)]
    variance_mode: Option<String>,
    /// Parameter-name prefixes held fixed during training.
    #[arg(long, value_delimiter = ',')]
    freeze: Option<Vec<String>>,
    #[arg(long)]
    n_pred_samples: Option<usize>,
    #[arg(long)]
    n_repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV with header `x_0,...,x_{D-1}`, raw units.
    #[arg(long)]
    inputs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Canonical CSV of held-out points.
    #[arg(long)]
    test_csv: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PodCommand {
    /// Truncated POD of one snapshot matrix.
    Decompose(DecomposeArgs),
    /// Forecast case II from case I plus its first snapshots.
    Forecast(ForecastArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    /// Snapshot matrix (`.csv`, or the binary format otherwise).
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    /// Remove the temporal mean field first.
    #[arg(long)]
    center: bool,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long, requires = "case2")]
    case1: Option<PathBuf>,
    #[arg(long, requires = "case1")]
    case2: Option<PathBuf>,
    /// Use generated two-case snapshots instead of files.
    #[arg(long, conflicts_with = "case1")]
    synthetic: bool,
    #[arg(long, default_value_t = 200)]
    synthetic_time: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 20)]
    n_obs: usize,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, default_value_t = 1)]
    n_repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result bundle directory.
    dir: PathBuf,
}

fn parse<T: std::str::FromStr>(v: Option<String>) -> Result<Option<T>, Error>
where
    T::Err: std::fmt::Display,
{
    v.map(|s| s.parse::<T>().map_err(|e| Error::Config(e.to_string()))).transpose()
}

fn parse_serde<T: serde::de::DeserializeOwned>(v: Option<String>, what: &str) -> Result<Option<T>, Error> {
    v.map(|s| {
        serde_json::from_value(serde_json::Value::String(s.clone()))
            .map_err(|_| Error::Config(format!("unknown {what} `{s}`")))
    })
    .transpose()
}

impl TrainArgs {
    fn layer(self) -> Result<(Option<PathBuf>, ConfigLayer), Error> {
        let layer = ConfigLayer {
            dataset: parse::<DatasetKind>(self.dataset)?,
            data_dir: self.data_dir,
            train_csv: self.train_csv,
            test_csv: self.test_csv,
            output_dir: self.output_dir,
            variant: parse::<Variant>(self.variant)?,
            q: self.q,
            h: self.h,
            m: parse::<InducingSize>(self.m)?,
            activation: parse_serde::<Activation>(self.activation, "activation")?,
            length_scale_init: self.length_scale_init,
            noise_init: self.noise_init,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            minibatch: self.minibatch,
            s_train: self.s_train,
            log_every: self.log_every,
            variance_mode: parse_serde::<VarianceMode>(self.variance_mode, "variance mode")?,
            freeze: self.freeze,
            n_pred_samples: self.n_pred_samples,
            n_repeats: self.n_repeats,
            seed: self.seed,
        };
        Ok((self.config, layer))
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn toy_gen(a: ToyGenArgs) -> Result<(), Error> {
    std::fs::write(&a.out, canonical_csv_string(&gen_toy::<f64>(a.seed).tasks))?;
    if let Some(p) = a.test_out {
        std::fs::write(p, canonical_csv_string(&toy_test_grid::<f64>(a.grid_points, TOY_DOMAIN.0, TOY_DOMAIN.1)))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let (file, flags) = a.layer()?;
    let base = match file {
        Some(p) => ConfigLayer::from_toml_file(&p)?,
        None => ConfigLayer::default(),
    };
    let cfg = RunConfig::resolve(base.overlay(flags))?;
    let rows = run_experiment(&cfg)?;
    println!("results in {}", cfg.output_dir.display());
    print!("{}", summary_table(&rows));
    Ok(())
}

fn read_inputs(path: &Path, dim: usize) -> Result<DenseMatrix<f64>, Error> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let expected: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!("input header must be {}", expected.join(","))));
    }
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            let row = l
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| Error::SchemaMismatch(format!("row {}: bad number `{f}`", i + 1))))
                .collect::<Result<Vec<f64>, Error>>()?;
            if row.len() != dim {
                return Err(Error::SchemaMismatch(format!("row {} has {} fields, expected {dim}", i + 1, row.len())));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if rows.is_empty() {
        return Err(Error::SchemaMismatch("no input rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, mtgp::model::ModelState<f64>, mtgp::data::Normalization<f64>), Error> {
    let ck = Checkpoint::load(path)?;
    let state = ck.to_state()?;
    let norm = ck
        .normalization
        .clone()
        .unwrap_or_else(|| mtgp::data::Normalization::identity(ck.input_dim, ck.n_tasks));
    Ok((ck, state, norm))
}

fn task_name(ck: &Checkpoint, c: usize) -> String {
    ck.task_names.get(c).cloned().unwrap_or_else(|| c.to_string())
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let (ck, state, norm) = load_checkpoint(&a.checkpoint)?;
    let xs = read_inputs(&a.inputs, ck.input_dim)?;
    let pred = predict_raw(&state, &norm, &xs, a.n_samples, &mut RngStream::new(a.seed, 0))?;
    let mut s = String::from("row,task,mean,var\n");
    for (i, row) in pred.iter().enumerate() {
        for (c, p) in row.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", task_name(&ck, c), p.mean, p.var);
        }
    }
    write_or_print(a.out.as_deref(), &s)
}

fn evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let (ck, state, norm) = load_checkpoint(&a.checkpoint)?;
    let mut test = read_canonical_csv::<f64>(&a.test_csv)?;
    if test.len() > ck.n_tasks || test.iter().any(|t| t.x.cols() != ck.input_dim) {
        return Err(Error::SchemaMismatch("test file does not match the checkpoint's tasks or input dimension".into()));
    }
    test.resize_with(ck.n_tasks, || mtgp::data::TaskData::empty(ck.input_dim));
    let pred = predict_test_sets(&state, &norm, &test, a.n_samples, &mut RngStream::new(a.seed, 0))?;
    let mut out = Vec::new();
    for (c, t) in test.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let train_var = norm.output_std[c] * norm.output_std[c];
        let (mae, smse, nll) = compute_metrics(&pred[c], &t.y, train_var)?;
        out.push(TaskMetrics { task: task_name(&ck, c), mae, smse, nll, n_test: t.len(), seed: a.seed });
    }
    write_or_print(a.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn read_snapshots(path: &Path) -> Result<SnapshotMatrix<f64>, Error> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_snapshots_csv(path)
    } else {
        read_snapshots_bin(path)
    }
}

fn matrix_csv(m: &DenseMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn pod(cmd: PodCommand) -> Result<(), Error> {
    match cmd {
        PodCommand::Decompose(a) => {
            let s = read_snapshots(&a.snapshots)?;
            let basis = pod_decompose_with(&s, a.rank, a.center)?;
            std::fs::create_dir_all(&a.output_dir)?;
            std::fs::write(a.output_dir.join("modes.csv"), matrix_csv(&basis.modes))?;
            std::fs::write(a.output_dir.join("coeffs.csv"), matrix_csv(&basis.coeffs))?;
            std::fs::write(a.output_dir.join("singular_values.json"), serde_json::to_string_pretty(&basis.singular_values)?)?;
            if let Some(c) = &basis.center {
                std::fs::write(a.output_dir.join("center.json"), serde_json::to_string(c)?)?;
            }
            println!("singular values: {:?}", basis.singular_values);
            Ok(())
        }
        PodCommand::Forecast(a) => {
            if !a.synthetic && a.case1.is_none() {
                return Err(Error::Config("give --case1/--case2 or --synthetic".into()));
            }
            let mut cfg = ForecastConfig { rank: a.rank, window: a.window, n_obs: a.n_obs, ..Default::default() };
            if let Some(it) = a.iterations {
                cfg.train.iterations = it;
            }
            if let Some(v) = parse::<Variant>(a.variant)? {
                cfg.model.variant = v;
            }
            std::fs::create_dir_all(&a.output_dir)?;
            std::fs::write(a.output_dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
            let files = match (&a.case1, &a.case2) {
                (Some(p1), Some(p2)) => Some((read_snapshots(p1)?, read_snapshots(p2)?)),
                _ => None,
            };
            let mut wins = 0;
            for r in 0..a.n_repeats {
                let seed = a.seed + r as u64;
                let (c1, c2) = match &files {
                    Some((c1, c2)) => (c1.clone(), c2.clone()),
                    None => synthetic_two_cases(&SyntheticSnapshots { n_time: a.synthetic_time, ..Default::default() }, seed)?,
                };
                let res = forecast_cases(&c1, &c2, &cfg, seed)?;
                let (mt, gp) = (res.multi_task.closed_loop_smse, res.single_task_gp.closed_loop_smse);
                wins += usize::from(mt < gp);
                println!("seed {seed}: closed-loop SMSE multi-task {mt:.4}, single-task GP {gp:.4}");
                std::fs::write(a.output_dir.join(format!("forecast-seed-{seed}.json")), serde_json::to_string_pretty(&res)?)?;
            }
            println!("multi-task better on {wins} of {} seeds", a.n_repeats);
            Ok(())
        }
    }
}

fn report(a: ReportArgs) -> Result<(), Error> {
    print!("{}", summary_table(&write_summary(&a.dir)?));
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ToyGen(a) => toy_gen(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pod(c) => pod(c),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
