//! Command-line front end.
//!
//! Every subcommand that writes files also writes `<out>.config.json`, the
//! fully defaulted configuration it ran with. Feeding that file back via
//! `--config` reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    add_noise, fixed_schedule_samples, generate_dataset, Dataset, DatasetConfig, NoiseSpec,
    NormalizationSpec, TissueRanges,
};
use crate::error::{OtomError, Result};
use crate::fit::{fit_bloch, FitConfig, FitResult};
use crate::image::{render_pgm, Window};
use crate::nn::{
    fcnn_train, load_model, save_history, save_model, train_on_dataset, transfer_train, BiLstm,
    BiLstmConfig, Fcnn, FcnnConfig, Model, Regressor, TrainConfig, TrainHistory, TransferConfig,
};
use crate::phantom::{
    build_phantoms, evaluate_suite, mae_table_csv, param_index, Estimator, EvalSuite, Method,
    ParamSet, PARAM_NAMES, PARAM_UNITS,
};
use crate::physics::{simulate_fingerprint, PoolConstants, TissueParams};
use crate::schedule::{fixtures, sample_fixed_length, sample_schedule, Schedule, ScheduleRanges};

#[derive(Debug, Parser)]
#[command(
    name = "otom",
    version,
    about = "MT fingerprint simulation, training and evaluation"
)]
pub struct Cli {
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one fingerprint.
    Simulate(SimulateArgs),
    /// Draw a random schedule.
    SampleSchedule(SampleScheduleArgs),
    /// Generate a training dataset.
    GenData(GenDataArgs),
    /// Train the bi-LSTM on a dataset.
    Train(TrainArgs),
    /// Train a fixed-schedule FCNN on freshly simulated data.
    TrainFcnn(TrainFcnnArgs),
    /// Fine-tune a trained bi-LSTM on one schedule.
    Transfer(TransferArgs),
    /// Fit tissue parameters to one fingerprint.
    Fit(FitArgs),
    /// Evaluate an estimator on the digital phantoms.
    Eval(EvalArgs),
    /// Render a map from an evaluation report as a PGM image.
    ExportMap(ExportMapArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Schedule CSV path or fixture name (PR10, PR20, PR30, PR40).
    #[arg(long)]
    pub schedule: String,
    /// Tissue in SI units: kmw=<1/s>,m0m=<fraction>,t2m=<s>,t1w=<s>.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tissue: Vec<String>,
    /// Pool constants JSON.
    #[arg(long)]
    pub constants: Option<PathBuf>,
    /// Add white Gaussian noise at this SNR.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleScheduleArgs {
    /// Number of scans; drawn from the default length range when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_samples: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFcnnArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Schedule CSV path or fixture name.
    #[arg(long)]
    pub schedule: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained bi-LSTM weights.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schedule: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schedule: String,
    /// Fingerprint CSV with a `signal` column (as written by `simulate`).
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Model weights; repeat once per schedule for FCNN.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Schedules to evaluate (CSV paths or fixture names).
    #[arg(long)]
    pub schedule: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate on noiseless phantom images.
    #[arg(long)]
    pub noiseless: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Otom,
    OtomT,
    Fcnn,
    Fit,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Otom => Method::Otom,
            MethodArg::OtomT => Method::OtomT,
            MethodArg::Fcnn => Method::Fcnn,
            MethodArg::Fit => Method::Fit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MapKind {
    Estimate,
    Truth,
    Difference,
}

#[derive(Debug, Args)]
pub struct ExportMapArgs {
    /// Evaluation report (report.json).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// kmw, m0m, t2m or t1w.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_enum, default_value = "estimate")]
    pub kind: MapKind,
    /// Schedule label; defaults to the first one in the report.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Phantom name; defaults to the phantom sweeping `param`.
    #[arg(long)]
    pub phantom: Option<String>,
    /// Display window as min,max in reporting units.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub window: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error: 2 for bad input or configuration,
/// 3 for failures while running.
pub fn exit_code(err: &OtomError) -> i32 {
    match err {
        OtomError::Config(_)
        | OtomError::Parse { .. }
        | OtomError::Json(_)
        | OtomError::Domain(_) => 2,
        OtomError::Io(_) | OtomError::Format(_) | OtomError::Numeric(_) => 3,
    }
}

/// Worker count: 1 in deterministic mode, else capped by OTOM_THREADS.
pub fn worker_threads(deterministic: bool) -> Result<Option<usize>> {
    if deterministic {
        return Ok(Some(1));
    }
    match std::env::var("OTOM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(OtomError::Config(format!(
                "OTOM_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| OtomError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| OtomError::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn resolve_schedule(spec: &str) -> Result<Schedule> {
    fixtures::resolve(spec).map_err(|e| match e {
        OtomError::Io(io) => OtomError::Config(format!("cannot read schedule `{spec}`: {io}")),
        other => other,
    })
}

/// Parse `key=value` tissue entries (SI units). Every key is required.
pub fn parse_tissue(items: &[String]) -> Result<TissueParams> {
    let mut values: [Option<f64>; 4] = [None; 4];
    for item in items {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| OtomError::Config(format!("tissue entry `{item}` is not key=value")))?;
        let key = key.trim();
        let k = param_index(key)
            .ok_or_else(|| OtomError::Config(format!("unknown tissue parameter `{key}`")))?;
        let v: f64 = value.trim().parse().map_err(|_| {
            OtomError::Config(format!(
                "tissue parameter `{key}`: `{value}` is not a number"
            ))
        })?;
        values[k] = Some(v);
    }
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = values[k].ok_or_else(|| {
            OtomError::Config(format!("missing tissue parameter `{}`", PARAM_NAMES[k]))
        })?;
    }
    let t = TissueParams::from_array(out);
    t.validate()?;
    Ok(t)
}

/// Read the `signal` column of a fingerprint CSV, or a single-column list.
pub fn read_signal(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| OtomError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, message: String| OtomError::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let Some((_, header)) = lines.next() else {
        return Err(parse_err(0, "empty file".into()));
    };
    let column = header
        .split(',')
        .position(|h| h.trim() == "signal")
        .ok_or_else(|| parse_err(0, "no `signal` column".into()))?;
    lines
        .map(|(i, line)| {
            let field = line
                .split(',')
                .nth(column)
                .ok_or_else(|| parse_err(i, "missing signal field".into()))?;
            field
                .trim()
                .parse()
                .map_err(|_| parse_err(i, format!("`{field}` is not a number")))
        })
        .collect()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::SampleSchedule(a) => sample(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::TrainFcnn(a) => train_fcnn(a),
        Command::Transfer(a) => transfer(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::ExportMap(a) => export_map(a),
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SimulateSnapshot<'a> {
    schedule: &'a Schedule,
    tissue: TissueParams,
    constants: PoolConstants,
    noise: NoiseSpec,
    seed: u64,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let schedule = resolve_schedule(&a.schedule)?;
    let tissue = parse_tissue(&a.tissue)?;
    let constants: PoolConstants = load_config(a.constants.as_deref())?;
    let noise = match a.snr_db {
        Some(snr_db) => NoiseSpec { snr_db },
        None => NoiseSpec::noiseless(),
    };
    let clean = simulate_fingerprint(&tissue, &constants, &schedule.points)?;
    let fp = add_noise(&clean, &noise, a.seed);
    let mut csv = String::from("index,b1_uT,omega_ppm,ts_s,td_s,signal\n");
    for (i, (p, s)) in schedule.points.iter().zip(fp.values()).enumerate() {
        csv.push_str(&format!("{i},{},{},{},{},{s}\n", p.b1, p.omega, p.ts, p.td));
    }
    fs::write(&a.out, csv)?;
    write_json(
        &sidecar(&a.out, ".config.json"),
        &SimulateSnapshot {
            schedule: &schedule,
            tissue,
            constants,
            noise,
            seed: a.seed,
        },
    )
}

fn sample(a: &SampleScheduleArgs) -> Result<()> {
    let ranges = ScheduleRanges::default();
    let schedule = match a.n {
        Some(n) => sample_fixed_length(a.seed, n, &ranges)?,
        None => sample_schedule(a.seed, &ranges)?,
    };
    schedule.save(&a.out)?;
    log::info!("wrote {} scans to {}", schedule.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GenDataSummary {
    n_samples: u64,
    bytes: u64,
    manifest_sha256: String,
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut config: DatasetConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(n) = a.n_samples {
        config.n_samples = n;
    }
    config
        .validate()
        .map_err(|e| OtomError::Config(e.to_string()))?;
    let summary = generate_dataset(&config, &a.out)?;
    log::info!(
        "generated {} records in {:.1}s",
        summary.n_samples,
        summary.seconds
    );
    write_json(&sidecar(&a.out, ".config.json"), &config)?;
    let out = GenDataSummary {
        n_samples: summary.n_samples,
        bytes: summary.bytes,
        manifest_sha256: summary.manifest_sha256,
    };
    write_json(&sidecar(&a.out, ".summary.json"), &out)?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

/// `train` configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub model: BiLstmConfig,
    pub train: TrainConfig,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainSummary {
    parameters: usize,
    epochs: usize,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
    final_train_loss: f64,
    stopped_early: bool,
}

impl TrainSummary {
    fn new(parameters: usize, h: &TrainHistory) -> Self {
        let best = h.best_epoch.map(|e| &h.epochs[e - 1]);
        Self {
            parameters,
            epochs: h.epochs.len(),
            best_epoch: h.best_epoch,
            best_val_loss: best.and_then(|e| e.val_loss),
            final_train_loss: h.epochs.last().map_or(f64::NAN, |e| e.train_loss),
            stopped_early: h.stopped_early,
        }
    }
}

fn finish_training(
    out: &Path,
    model: Model,
    config: &impl Serialize,
    history: &TrainHistory,
) -> Result<()> {
    let parameters = match &model {
        Model::BiLstm(m) => m.params().len(),
        Model::Fcnn(m) => m.params().len(),
    };
    save_model(out, &model)?;
    save_history(out, history)?;
    write_json(&sidecar(out, ".config.json"), config)?;
    let summary = TrainSummary::new(parameters, history);
    write_json(&sidecar(out, ".summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut config: TrainRunConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.train.seed = seed;
        config.init_seed = seed;
    }
    config.train.validate()?;
    let dataset = Dataset::read(&a.data)?;
    dataset.verify_manifest(&a.data)?;
    let norm = NormalizationSpec::from_ranges(
        &dataset.header.schedule_ranges,
        &dataset.header.tissue_ranges,
    );
    let mut model = BiLstm::new(config.model, norm, config.init_seed)?;
    let start = Instant::now();
    let history = train_on_dataset(&mut model, &dataset, &config.train)?;
    log::info!("trained in {:.1}s", start.elapsed().as_secs_f64());
    finish_training(&a.out, model.into(), &config, &history)
}

/// `train-fcnn` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct FcnnRunConfig {
    pub model: FcnnConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub n_samples: usize,
    pub data_seed: u64,
    pub tissue_ranges: TissueRanges,
    pub noise: NoiseSpec,
    pub constants: PoolConstants,
}

impl Default for FcnnRunConfig {
    fn default() -> Self {
        Self {
            model: FcnnConfig::default(),
            train: TrainConfig::default(),
            init_seed: 0,
            n_samples: 100_000,
            data_seed: 1,
            tissue_ranges: TissueRanges::default(),
            noise: NoiseSpec::default(),
            constants: PoolConstants::default(),
        }
    }
}

fn train_fcnn(a: &TrainFcnnArgs) -> Result<()> {
    let mut config: FcnnRunConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.train.seed = seed;
        config.init_seed = seed;
        config.data_seed = seed;
    }
    config.train.validate()?;
    let schedule = resolve_schedule(&a.schedule)?;
    let samples = fixed_schedule_samples(
        &schedule,
        config.n_samples,
        config.data_seed,
        &config.tissue_ranges,
        &config.noise,
        &config.constants,
    )?;
    let norm = NormalizationSpec::from_ranges(&ScheduleRanges::default(), &config.tissue_ranges);
    let mut model = Fcnn::new(config.model.clone(), schedule, norm, config.init_seed)?;
    let history = fcnn_train(&mut model, &samples, &config.train)?;
    finish_training(&a.out, model.into(), &config, &history)
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let mut config: TransferConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    config.train.validate()?;
    let schedule = resolve_schedule(&a.schedule)?;
    let mut model = load_model(&a.model)?
        .into_bilstm()
        .map_err(|e| OtomError::Config(e.to_string()))?;
    let history = transfer_train(&mut model, &schedule, &config)?;
    finish_training(&a.out, model.into(), &config, &history)
}

fn fit(a: &FitArgs) -> Result<()> {
    let mut config: FitConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    let schedule = resolve_schedule(&a.schedule)?;
    let signal = read_signal(&a.signal)?;
    let result: FitResult = fit_bloch(&signal, &schedule, &config)?;
    let text = serde_json::to_string_pretty(&result)? + "\n";
    match &a.out {
        Some(out) => {
            fs::write(out, text)?;
            write_json(&sidecar(out, ".config.json"), &config)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// `eval` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EvalConfig {
    pub method: Method,
    /// One bi-LSTM for otom/otomT; one FCNN per schedule for fcnn.
    pub models: Vec<PathBuf>,
    /// Ignored for fcnn, whose models carry their schedules.
    pub schedules: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub phantom_seed: u64,
    pub noise_seed: u64,
    pub noise: NoiseSpec,
    pub tissue_ranges: TissueRanges,
    pub constants: PoolConstants,
    pub fit: FitConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            method: Method::Otom,
            models: Vec::new(),
            schedules: ["PR40", "PR30", "PR20", "PR10"].map(String::from).to_vec(),
            width: 64,
            height: 64,
            phantom_seed: 0,
            noise_seed: 1,
            noise: NoiseSpec::default(),
            tissue_ranges: TissueRanges::default(),
            constants: PoolConstants::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EvalSummaryRow {
    schedule: String,
    method: &'static str,
    pooled_mae: ParamSet<f64>,
    runtime_seconds: f64,
}

/// Run an evaluation described by `config` and return one suite per
/// schedule.
pub fn run_eval(config: &EvalConfig) -> Result<Vec<EvalSuite>> {
    let phantoms = build_phantoms(
        config.phantom_seed,
        config.width,
        config.height,
        &config.tissue_ranges,
    )?;
    let one_model = || -> Result<BiLstm> {
        match config.models.as_slice() {
            [path] => load_model(path)?
                .into_bilstm()
                .map_err(|e| OtomError::Config(e.to_string())),
            _ => Err(OtomError::Config(format!(
                "method {:?} needs exactly one model, got {}",
                config.method,
                config.models.len()
            ))),
        }
    };
    let schedules = || -> Result<Vec<Schedule>> {
        config
            .schedules
            .iter()
            .map(|s| resolve_schedule(s))
            .collect()
    };
    let suite = |est: &Estimator, s: &Schedule| {
        evaluate_suite(
            est,
            &phantoms,
            s,
            &config.noise,
            &config.constants,
            config.noise_seed,
        )
    };
    match config.method {
        Method::Otom | Method::OtomT => {
            let model = one_model()?;
            let est = if config.method == Method::Otom {
                Estimator::Otom(&model)
            } else {
                Estimator::OtomT(&model)
            };
            schedules()?.iter().map(|s| suite(&est, s)).collect()
        }
        Method::Fcnn => {
            if config.models.is_empty() {
                return Err(OtomError::Config(
                    "method fcnn needs at least one model".into(),
                ));
            }
            config
                .models
                .iter()
                .map(|path| {
                    let m = load_model(path)?
                        .into_fcnn()
                        .map_err(|e| OtomError::Config(e.to_string()))?;
                    suite(&Estimator::Fcnn(&m), m.schedule())
                })
                .collect()
        }
        Method::Fit => {
            config.fit.validate()?;
            schedules()?
                .iter()
                .map(|s| suite(&Estimator::Fit(&config.fit), s))
                .collect()
        }
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut config: EvalConfig = load_config(a.config.as_deref())?;
    if let Some(m) = a.method {
        config.method = m.into();
    }
    if !a.model.is_empty() {
        config.models = a.model.clone();
    }
    if !a.schedule.is_empty() {
        config.schedules = a.schedule.clone();
    }
    if let Some(seed) = a.seed {
        config.phantom_seed = seed;
        config.noise_seed = seed;
        config.fit.seed = seed;
    }
    if a.noiseless {
        config.noise = NoiseSpec::noiseless();
    }
    let suites = run_eval(&config)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("config.json"), &config)?;
    write_json(&a.out.join("report.json"), &suites)?;
    let table = mae_table_csv(&suites);
    fs::write(a.out.join("mae.csv"), &table)?;
    let rows: Vec<EvalSummaryRow> = suites
        .iter()
        .map(|s| EvalSummaryRow {
            schedule: s.schedule.clone(),
            method: s.method.label(),
            pooled_mae: s.pooled_mae,
            runtime_seconds: s.runtime_seconds,
        })
        .collect();
    write_json(&a.out.join("summary.json"), &rows)?;
    print!("{table}");
    Ok(())
}

/// Default display range in reporting units for truth and estimate maps.
fn default_window(k: usize) -> Window {
    let r = TissueRanges::default().intervals()[k];
    let scale = [1.0, 100.0, 1e6, 1e3][k];
    Window {
        min: r.min * scale,
        max: r.max * scale,
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MapSidecar<'a> {
    param: &'static str,
    unit: &'static str,
    kind: MapKind,
    schedule: &'a str,
    phantom: &'a str,
    width: usize,
    height: usize,
    window: Window,
}

fn export_map(a: &ExportMapArgs) -> Result<()> {
    let k = param_index(&a.param).ok_or_else(|| {
        OtomError::Config(format!(
            "unknown parameter `{}`; expected one of {PARAM_NAMES:?}",
            a.param
        ))
    })?;
    let text = fs::read_to_string(&a.input)
        .map_err(|e| OtomError::Config(format!("cannot read {}: {e}", a.input.display())))?;
    let suites: Vec<EvalSuite> = serde_json::from_str(&text)?;
    let suite = match &a.schedule {
        Some(label) => suites.iter().find(|s| &s.schedule == label),
        None => suites.first(),
    }
    .ok_or_else(|| OtomError::Config("schedule not found in report".into()))?;
    let phantom_name = a.phantom.as_deref().unwrap_or(PARAM_NAMES[k]);
    let report = suite
        .reports
        .iter()
        .find(|r| r.phantom.eq_ignore_ascii_case(phantom_name))
        .ok_or_else(|| {
            OtomError::Config(format!("phantom `{phantom_name}` not found in report"))
        })?;
    let values = match a.kind {
        MapKind::Estimate => report.maps.estimate.get(k),
        MapKind::Truth => report.maps.truth.get(k),
        MapKind::Difference => report.maps.difference.get(k),
    };
    let window = match (&a.window, a.kind) {
        (Some(w), _) => Window::new(w[0], w[1]).map_err(|e| OtomError::Config(e.to_string()))?,
        (None, MapKind::Difference) => Window::symmetric(values),
        (None, _) => default_window(k),
    };
    fs::write(
        &a.out,
        render_pgm(values, report.width, report.height, &window)?,
    )?;
    write_json(
        &sidecar(&a.out, ".json"),
        &MapSidecar {
            param: PARAM_NAMES[k],
            unit: PARAM_UNITS[k],
            kind: a.kind,
            schedule: &suite.schedule,
            phantom: &report.phantom,
            width: report.width,
            height: report.height,
            window,
        },
    )
}
