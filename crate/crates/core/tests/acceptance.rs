//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria 4 to 7 share one desk-scale trained model.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use otom::dataset::{
    add_noise, fixed_schedule_samples, generate_sample, sample_tissue, DatasetConfig, Example,
    NoiseSpec, NormalizationSpec, Sample, TissueRanges,
};
use otom::fit::{fit_bloch, FitConfig};
use otom::nn::{
    gradient_check, split_examples, train, transfer_train, BiLstm, BiLstmConfig, Fcnn, FcnnConfig,
    Regressor, TrainConfig, TransferConfig,
};
use otom::physics::lineshape::{
    super_lorentzian_integral, super_lorentzian_integrand, SuperLorentzianTable,
};
use otom::physics::ode::ode_signal;
use otom::physics::{offset_rad_per_sec, signal, simulate_fingerprint, PoolConstants};
use otom::rng::{derive_seed, SeededRng};
use otom::schedule::{fixtures, sample_fixed_length, ScheduleRanges};
use otom::{Schedule, TissueParams};

const NAMES: [&str; 4] = ["kmw", "m0m", "t2m", "t1w"];

/// Desk-scale training run shared by criteria 4 to 7.
const TRAIN_SAMPLES: u64 = 100_000;
const TRAIN_SEED: u64 = 2024;
const INIT_SEED: u64 = 7;
const TEST_SAMPLES: u64 = 5_000;
const FIXED_TEST_SAMPLES: usize = 2_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run(id: usize, title: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    println!(
        "[{}] {id:>2} {title}: {} ({:.1}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    v.pass
}

fn within(start: Instant, limit_s: u64) -> bool {
    start.elapsed() < Duration::from_secs(limit_s)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn physics_oracle() -> Verdict {
    let start = Instant::now();
    let ranges = ScheduleRanges::default();
    let tissue = TissueRanges::default();
    let consts = PoolConstants::default();
    let mut devs = Vec::with_capacity(1000);
    for i in 0..1000u64 {
        let t = sample_tissue(derive_seed(101, 1, i), &tissue).unwrap();
        let scan = sample_fixed_length(derive_seed(101, 2, i), 1, &ranges)
            .unwrap()
            .points[0];
        let closed = signal(&t, &consts, &scan).unwrap();
        let reference = ode_signal(&t, &consts, &scan, 1e-4).unwrap();
        devs.push((closed - reference).abs() / reference.abs());
    }
    let max = devs.iter().copied().fold(0.0, f64::max);
    let med = median(&mut devs);
    let fast = within(start, 60);
    verdict(
        med <= 0.02 && max <= 0.05 && fast,
        format!("median rel dev {med:.2e}, max {max:.2e} over 1000 draws"),
    )
}

/// Million-point midpoint rule, written out here independently of the
/// library's Gauss-Legendre rule.
fn midpoint(x: f64) -> f64 {
    let n = 1_000_000;
    let h = FRAC_PI_2 / n as f64;
    let sum: f64 = (0..n)
        .map(|k| super_lorentzian_integrand((k as f64 + 0.5) * h, x))
        .sum();
    (2.0 / PI).sqrt() * sum * h
}

fn lineshape_oracle() -> Verdict {
    let consts = PoolConstants::default();
    let s = ScheduleRanges::default();
    let t = TissueRanges::default();
    let lo = offset_rad_per_sec(s.omega.min, &consts).abs() * t.t2m.min;
    let hi = offset_rad_per_sec(s.omega.max, &consts).abs() * t.t2m.max;
    let table = SuperLorentzianTable::shared();
    let steps = 120;
    let (mut quad_err, mut table_err) = (0.0f64, 0.0f64);
    for k in 0..=steps {
        let x = lo * (hi / lo).powf(k as f64 / steps as f64);
        let reference = midpoint(x);
        quad_err = quad_err.max((super_lorentzian_integral(x) - reference).abs() / reference);
        table_err = table_err.max((table.integral(x) - reference).abs() / reference);
    }
    verdict(
        quad_err < 1e-4 && table_err < 1e-4,
        format!(
            "x in [{lo:.3e}, {hi:.3e}]: quadrature max rel err {quad_err:.2e}, table {table_err:.2e}"
        ),
    )
}

fn random_examples(rng: &mut SeededRng, count: usize, len: usize) -> Vec<Example> {
    (0..count)
        .map(|_| Example {
            inputs: (0..len)
                .map(|_| std::array::from_fn(|_| rng.unit()))
                .collect(),
            target: std::array::from_fn(|_| rng.unit()),
        })
        .collect()
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let norm = NormalizationSpec::default();
    let mut rng = SeededRng::new(55);

    let cfg = BiLstmConfig {
        layers: 1,
        hidden: 8,
        input_dim: 5,
    };
    let mut lstm = BiLstm::new(cfg, norm, 3).unwrap();
    let exs = random_examples(&mut rng, 3, 5);
    let refs: Vec<&Example> = exs.iter().collect();
    let lstm_err = gradient_check(&mut lstm, &refs, 1e-5)
        .unwrap()
        .max_rel_error;

    let schedule = fixtures::pseudo_random(10).unwrap();
    let mut fcnn = Fcnn::new(
        FcnnConfig {
            hidden: vec![32, 32],
        },
        schedule,
        norm,
        4,
    )
    .unwrap();
    let exs = random_examples(&mut rng, 3, 10);
    fcnn.fit_input_scaling(&exs).unwrap();
    let refs: Vec<&Example> = exs.iter().collect();
    let fcnn_err = gradient_check(&mut fcnn, &refs, 1e-5)
        .unwrap()
        .max_rel_error;

    verdict(
        lstm_err < 1e-4 && fcnn_err < 1e-4 && within(start, 30),
        format!("max rel err bi-LSTM {lstm_err:.2e}, FCNN {fcnn_err:.2e}"),
    )
}

/// MAE per parameter, in SI units.
fn mae(truth: &[TissueParams], estimate: &[TissueParams]) -> [f64; 4] {
    let mut sum = [0.0; 4];
    for (t, e) in truth.iter().zip(estimate) {
        for (k, (a, b)) in t.to_array().iter().zip(e.to_array()).enumerate() {
            sum[k] += (a - b).abs();
        }
    }
    sum.map(|s| s / truth.len() as f64)
}

fn predict_samples(model: &BiLstm, samples: &[Sample]) -> Vec<TissueParams> {
    let exs: Vec<Example> = samples
        .iter()
        .map(|s| model.normalization.example(s))
        .collect();
    let inputs: Vec<&[[f64; 5]]> = exs.iter().map(|e| e.inputs.as_slice()).collect();
    model
        .predict_normalized(&inputs)
        .unwrap()
        .iter()
        .map(|u| model.normalization.denormalize_target(u))
        .collect()
}

fn labels(samples: &[Sample]) -> Vec<TissueParams> {
    samples.iter().map(|s| s.label).collect()
}

fn fmt4(v: [f64; 4]) -> String {
    NAMES
        .iter()
        .zip(v)
        .map(|(n, x)| format!("{n} {x:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Fourteen epochs fit the 30 minute budget on one core (about 110 s per
/// epoch); the higher initial rate matters more than the decay here.
fn desk_train_config() -> TrainConfig {
    TrainConfig {
        lr_init: 3e-3,
        lr_decay_every_epochs: 10,
        max_epochs: 14,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    }
}

fn desk_training(model: &mut Option<BiLstm>) -> Verdict {
    let start = Instant::now();
    let data = DatasetConfig {
        n_samples: TRAIN_SAMPLES,
        seed: TRAIN_SEED,
        ..DatasetConfig::default()
    };
    let samples: Vec<Sample> = (0..TRAIN_SAMPLES)
        .map(|i| generate_sample(&data, i).unwrap())
        .collect();
    let norm = data.normalization();
    let (tr, va) = split_examples(&samples, &norm);
    let mut net = BiLstm::new(BiLstmConfig::default(), norm, INIT_SEED).unwrap();
    let history = train(&mut net, &tr, &va, &desk_train_config()).unwrap();

    let train_labels = labels(&samples);
    let prior = TissueParams::from_array(std::array::from_fn(|k| {
        train_labels.iter().map(|t| t.to_array()[k]).sum::<f64>() / train_labels.len() as f64
    }));
    let test_cfg = DatasetConfig {
        n_samples: TEST_SAMPLES,
        seed: TRAIN_SEED + 1,
        ..DatasetConfig::default()
    };
    let test: Vec<Sample> = (0..TEST_SAMPLES)
        .map(|i| generate_sample(&test_cfg, i).unwrap())
        .collect();
    let truth = labels(&test);
    let net_mae = mae(&truth, &predict_samples(&net, &test));
    let prior_mae = mae(&truth, &vec![prior; truth.len()]);
    let reduction: [f64; 4] = std::array::from_fn(|k| 1.0 - net_mae[k] / prior_mae[k]);
    let pass = reduction[1] >= 0.5 && reduction[3] >= 0.5 && within(start, 30 * 60);
    *model = Some(net);
    verdict(
        pass,
        format!(
            "{} epochs; held-out MAE reduction vs prior mean: {}",
            history.epochs.len(),
            NAMES
                .iter()
                .zip(reduction)
                .map(|(n, r)| format!("{n} {:.0}%", 100.0 * r))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn fixed_test_set(schedule: &Schedule, n: usize, seed: u64) -> Vec<Sample> {
    fixed_schedule_samples(
        schedule,
        n,
        seed,
        &TissueRanges::default(),
        &NoiseSpec::default(),
        &PoolConstants::default(),
    )
    .unwrap()
}

fn schedule_mae(model: &BiLstm, test: &[Sample]) -> [f64; 4] {
    mae(&labels(test), &predict_samples(model, test))
}

fn length_trend(model: &BiLstm) -> Verdict {
    let pr40 = fixtures::resolve("PR40").unwrap();
    let pr10 = fixtures::resolve("PR10").unwrap();
    let m40 = schedule_mae(model, &fixed_test_set(&pr40, FIXED_TEST_SAMPLES, 501));
    let m10 = schedule_mae(model, &fixed_test_set(&pr10, FIXED_TEST_SAMPLES, 501));
    let better = (0..4).filter(|&k| m40[k] < m10[k]).count();
    verdict(
        better >= 3,
        format!(
            "PR40 lower on {better}/4; PR40 [{}] vs PR10 [{}]",
            fmt4(m40),
            fmt4(m10)
        ),
    )
}

fn schedule_agnostic(model: &BiLstm) -> Verdict {
    let ranges = ScheduleRanges::default();
    let tissue = TissueRanges::default();
    let mut finite = true;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in fixtures::LENGTHS {
        let mut per_schedule = Vec::new();
        for j in 0..20u64 {
            let schedule = sample_fixed_length(derive_seed(601, n as u64, j), n, &ranges).unwrap();
            let test = fixed_test_set(&schedule, 250, derive_seed(602, n as u64, j));
            let pred = predict_samples(model, &test);
            finite &= pred
                .iter()
                .all(|p| p.to_array().iter().all(|v| v.is_finite()));
            // Mean absolute error over the four parameters, each scaled by
            // its sampling range.
            let err: f64 = test
                .iter()
                .zip(&pred)
                .map(|(s, p)| {
                    let (t, e) = (s.label.to_array(), p.to_array());
                    (0..4)
                        .map(|k| (t[k] - e[k]).abs() / tissue.intervals()[k].width())
                        .sum::<f64>()
                        / 4.0
                })
                .sum::<f64>()
                / test.len() as f64;
            per_schedule.push(err);
        }
        let mean = per_schedule.iter().sum::<f64>() / 20.0;
        let var = per_schedule.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 20.0;
        let cv = var.sqrt() / mean;
        pass &= cv < 0.3;
        parts.push(format!("N={n} CV {cv:.3}"));
    }
    verdict(
        pass && finite,
        format!("finite={finite}; {}", parts.join(", ")),
    )
}

fn transfer_trend(model: &BiLstm) -> Verdict {
    let pr40 = fixtures::resolve("PR40").unwrap();
    let mut tuned = model.clone();
    transfer_train(&mut tuned, &pr40, &TransferConfig::default()).unwrap();
    let test = fixed_test_set(&pr40, FIXED_TEST_SAMPLES, 701);
    let base = schedule_mae(model, &test);
    let after = schedule_mae(&tuned, &test);
    let ok = (0..4).filter(|&k| after[k] <= base[k]).count();
    verdict(
        ok >= 3,
        format!(
            "transfer no worse on {ok}/4; tuned [{}] vs base [{}]",
            fmt4(after),
            fmt4(base)
        ),
    )
}

fn fit_round_trip() -> Verdict {
    let start = Instant::now();
    let schedule = fixtures::resolve("PR40").unwrap();
    let consts = PoolConstants::default();
    let config = FitConfig::default();
    let (mut small_residual, mut recovered) = (0, 0);
    for i in 0..100u64 {
        let t = sample_tissue(derive_seed(801, 1, i), &TissueRanges::default()).unwrap();
        let fp = simulate_fingerprint(&t, &consts, &schedule.points).unwrap();
        let r = fit_bloch(fp.values(), &schedule, &config).unwrap();
        let rel: Vec<f64> = t
            .to_array()
            .iter()
            .zip(r.params.to_array())
            .map(|(a, b)| ((a - b) / a).abs())
            .collect();
        small_residual += usize::from(r.residual_rms < 1e-6);
        recovered +=
            usize::from(rel[1] <= 0.02 && rel[3] <= 0.02 && rel[0] <= 0.1 && rel[2] <= 0.1);
    }
    verdict(
        small_residual >= 95 && recovered >= 95 && within(start, 600),
        format!("residual < 1e-6 in {small_residual}/100, parameters recovered in {recovered}/100"),
    )
}

fn noise_calibration() -> Verdict {
    let ranges = ScheduleRanges::default();
    let consts = PoolConstants::default();
    let spec = NoiseSpec::default();
    let (mut sq, mut count) = (0.0, 0usize);
    for i in 0..10_000u64 {
        let t = sample_tissue(derive_seed(901, 1, i), &TissueRanges::default()).unwrap();
        let schedule = otom::schedule::sample_schedule(derive_seed(901, 2, i), &ranges).unwrap();
        let clean = simulate_fingerprint(&t, &consts, &schedule.points).unwrap();
        let noisy = add_noise(&clean, &spec, derive_seed(901, 3, i));
        for (a, b) in clean.values().iter().zip(noisy.values()) {
            sq += (b - a).powi(2);
            count += 1;
        }
    }
    // Unit reference amplitude: SNR = 20·log10(1 / rms(noise)).
    let snr = -20.0 * (sq / count as f64).sqrt().log10();
    verdict(
        (snr - 46.0).abs() <= 0.5,
        format!("empirical SNR {snr:.3} dB over 10^4 fingerprints ({count} values)"),
    )
}

fn otom(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_otom"))
        .arg("--log-level=error")
        .args(args)
        .current_dir(dir)
        .stdout(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(dir: &Path, a: &str, b: &str) -> bool {
    match (fs::read(dir.join(a)), fs::read(dir.join(b))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("data.json"), r#"{"nSamples": 3000, "seed": 11}"#).unwrap();
    fs::write(
        d.join("train.json"),
        r#"{"model": {"layers": 2, "hidden": 16, "inputDim": 5}, "train": {"maxEpochs": 2, "batchSize": 128, "seed": 4}}"#,
    )
    .unwrap();
    let mut ran = true;
    for name in ["a.bin", "b.bin"] {
        ran &= otom(
            &[
                "--deterministic",
                "gen-data",
                "--config",
                "data.json",
                "--out",
                name,
            ],
            d,
        );
    }
    for name in ["a.otnn", "b.otnn"] {
        ran &= otom(
            &[
                "--deterministic",
                "train",
                "--config",
                "train.json",
                "--data",
                "a.bin",
                "--out",
                name,
            ],
            d,
        );
    }
    let pairs = [
        ("a.bin", "b.bin"),
        ("a.bin.json", "b.bin.json"),
        ("a.bin.config.json", "b.bin.config.json"),
        ("a.bin.summary.json", "b.bin.summary.json"),
        ("a.otnn", "b.otnn"),
        ("a.otnn.history.json", "b.otnn.history.json"),
        ("a.otnn.config.json", "b.otnn.config.json"),
        ("a.otnn.summary.json", "b.otnn.summary.json"),
    ];
    let identical = pairs.iter().filter(|(a, b)| same_files(d, a, b)).count();
    verdict(
        ran && identical == pairs.len(),
        format!("{identical}/{} output pairs byte-identical", pairs.len()),
    )
}

fn main() -> ExitCode {
    let mut results = vec![
        run(1, "physics oracle", physics_oracle),
        run(2, "lineshape oracle", lineshape_oracle),
        run(3, "gradient suite", gradient_suite),
    ];
    let mut model = None;
    results.push(run(4, "desk-scale training", || desk_training(&mut model)));
    let model = model.expect("training ran");
    results.push(run(5, "schedule-length trend", || length_trend(&model)));
    results.push(run(6, "schedule agnosticism", || schedule_agnostic(&model)));
    results.push(run(7, "transfer trend", || transfer_trend(&model)));
    results.push(run(8, "fit round trip", fit_round_trip));
    results.push(run(9, "noise calibration", noise_calibration));
    results.push(run(10, "determinism", determinism));
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
