//! Banded digital phantoms and estimator evaluation.
//!
//! Each phantom holds one tissue parameter at five constant values in
//! horizontal bands; the other three are drawn uniformly per pixel.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{add_noise, sample_tissue, NoiseSpec, TissueRanges};
use crate::error::{OtomError, Result};
use crate::fit::{fit_bloch, FitConfig};
use crate::nn::{BiLstm, Fcnn};
use crate::physics::{simulate_fingerprint, Fingerprint, PoolConstants, TissueParams};
use crate::rng::derive_seed;
use crate::schedule::Schedule;

pub const BANDS: usize = 5;

/// Band values in SI units (s⁻¹, fraction, s, s).
pub const BAND_VALUES: [[f64; BANDS]; 4] = [
    [5.0, 25.0, 50.0, 75.0, 100.0],
    [0.02, 0.06, 0.10, 0.14, 0.17],
    [1e-6, 25e-6, 50e-6, 75e-6, 100e-6],
    [0.2, 0.9, 1.6, 2.3, 3.0],
];

/// One value per tissue parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamSet<T> {
    pub kmw: T,
    pub m0m: T,
    pub t2m: T,
    pub t1w: T,
}

impl<T> ParamSet<T> {
    pub fn from_fn(mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            kmw: f(0),
            m0m: f(1),
            t2m: f(2),
            t1w: f(3),
        }
    }

    pub fn get(&self, k: usize) -> &T {
        [&self.kmw, &self.m0m, &self.t2m, &self.t1w][k]
    }
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 4] = ["kmw", "m0m", "t2m", "t1w"];
/// Reporting units in storage order.
pub const PARAM_UNITS: [&str; 4] = ["Hz", "%", "us", "ms"];
const DISPLAY_SCALE: [f64; 4] = [1.0, 100.0, 1e6, 1e3];

/// Tissue parameters in reporting units: kmw in Hz, M0m in %, T2m in μs,
/// T1w in ms.
pub fn display_units(t: &TissueParams) -> [f64; 4] {
    let v = t.to_array();
    std::array::from_fn(|k| v[k] * DISPLAY_SCALE[k])
}

pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub width: usize,
    pub height: usize,
    /// Index into [`PARAM_NAMES`] of the banded parameter.
    pub swept: usize,
    pub band_values: [f64; BANDS],
    /// Row-major.
    pub tissue: Vec<TissueParams>,
}

/// Band of image row `row`: five horizontal stripes of (near) equal height.
pub fn band_of_row(row: usize, height: usize) -> usize {
    row * BANDS / height
}

impl Phantom {
    pub fn name(&self) -> &'static str {
        PARAM_NAMES[self.swept]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// The four phantoms, swept parameter in storage order.
pub fn build_phantoms(
    seed: u64,
    width: usize,
    height: usize,
    ranges: &TissueRanges,
) -> Result<Vec<Phantom>> {
    if width == 0 || height < BANDS {
        return Err(OtomError::domain(format!(
            "phantom needs width ≥ 1 and height ≥ {BANDS}, got {width}×{height}"
        )));
    }
    ranges.validate()?;
    (0..4)
        .map(|swept| {
            let phantom_seed = derive_seed(seed, 30, swept as u64);
            let tissue = (0..width * height)
                .map(|p| {
                    let mut v =
                        sample_tissue(derive_seed(phantom_seed, 31, p as u64), ranges)?.to_array();
                    v[swept] = BAND_VALUES[swept][band_of_row(p / width, height)];
                    Ok(TissueParams::from_array(v))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Phantom {
                width,
                height,
                swept,
                band_values: BAND_VALUES[swept],
                tissue,
            })
        })
        .collect()
}

/// Per-pixel fingerprints, row-major. Pixel p uses noise seed
/// derive_seed(seed, 32, p).
pub fn simulate_phantom(
    phantom: &Phantom,
    schedule: &Schedule,
    noise: &NoiseSpec,
    consts: &PoolConstants,
    seed: u64,
) -> Result<Vec<Fingerprint>> {
    phantom
        .tissue
        .par_iter()
        .enumerate()
        .map(|(p, t)| {
            let clean = simulate_fingerprint(t, consts, &schedule.points)?;
            Ok(add_noise(&clean, noise, derive_seed(seed, 32, p as u64)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Method {
    Otom,
    OtomT,
    Fcnn,
    Fit,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Otom => "OTOM",
            Method::OtomT => "OTOM-T",
            Method::Fcnn => "FCNN",
            Method::Fit => "Bloch fitting",
        }
    }
}

pub enum Estimator<'a> {
    Otom(&'a BiLstm),
    OtomT(&'a BiLstm),
    Fcnn(&'a Fcnn),
    Fit(&'a FitConfig),
}

impl Estimator<'_> {
    pub fn method(&self) -> Method {
        match self {
            Estimator::Otom(_) => Method::Otom,
            Estimator::OtomT(_) => Method::OtomT,
            Estimator::Fcnn(_) => Method::Fcnn,
            Estimator::Fit(_) => Method::Fit,
        }
    }

    /// Estimates in input order. Fitting uses seed derive_seed(seed, 40, p)
    /// for pixel p.
    pub fn estimate(
        &self,
        schedule: &Schedule,
        fingerprints: &[Fingerprint],
    ) -> Result<Vec<TissueParams>> {
        let signals: Vec<&[f64]> = fingerprints.iter().map(|f| f.values()).collect();
        match self {
            Estimator::Otom(m) | Estimator::OtomT(m) => {
                m.predict_fixed_schedule(schedule, &signals)
            }
            Estimator::Fcnn(m) => {
                if m.schedule().points != schedule.points {
                    return Err(OtomError::Config(format!(
                        "FCNN is bound to schedule `{}`, not `{}`",
                        m.schedule().label(),
                        schedule.label()
                    )));
                }
                m.predict_many(&signals)
            }
            Estimator::Fit(cfg) => signals
                .par_iter()
                .enumerate()
                .map(|(p, s)| {
                    let c = FitConfig {
                        seed: derive_seed(cfg.seed, 40, p as u64),
                        ..(*cfg).clone()
                    };
                    Ok(fit_bloch(s, schedule, &c)?.params)
                })
                .collect(),
        }
    }
}

/// Per-parameter maps in reporting units, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Maps {
    pub truth: ParamSet<Vec<f64>>,
    pub estimate: ParamSet<Vec<f64>>,
    /// estimate − truth
    pub difference: ParamSet<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub method: Method,
    pub schedule: String,
    pub phantom: String,
    pub width: usize,
    pub height: usize,
    /// Mean absolute error in reporting units.
    pub mae: ParamSet<f64>,
    /// Pearson correlation with the truth; None for a constant map.
    pub correlation: ParamSet<Option<f64>>,
    /// Mean of the difference map.
    pub mean_difference: ParamSet<f64>,
    pub runtime_seconds: f64,
    pub maps: Maps,
}

pub fn mean_absolute_error(truth: &[f64], estimate: &[f64]) -> f64 {
    truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| (t - e).abs())
        .sum::<f64>()
        / truth.len() as f64
}

/// None when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Metrics of `estimate` against the phantom truth.
pub fn compare(
    method: Method,
    schedule: &Schedule,
    phantom: &Phantom,
    estimate: &[TissueParams],
    runtime_seconds: f64,
) -> Result<EvalReport> {
    if estimate.len() != phantom.pixels() {
        return Err(OtomError::domain("estimate count differs from pixel count"));
    }
    let column = |src: &[TissueParams], k: usize| -> Vec<f64> {
        src.iter().map(|t| display_units(t)[k]).collect()
    };
    let truth = ParamSet::from_fn(|k| column(&phantom.tissue, k));
    let est = ParamSet::from_fn(|k| column(estimate, k));
    let difference = ParamSet::from_fn(|k| {
        est.get(k)
            .iter()
            .zip(truth.get(k))
            .map(|(e, t)| e - t)
            .collect::<Vec<_>>()
    });
    Ok(EvalReport {
        method,
        schedule: schedule.label().to_string(),
        phantom: phantom.name().to_string(),
        width: phantom.width,
        height: phantom.height,
        mae: ParamSet::from_fn(|k| mean_absolute_error(truth.get(k), est.get(k))),
        correlation: ParamSet::from_fn(|k| pearson(truth.get(k), est.get(k))),
        mean_difference: ParamSet::from_fn(|k| {
            difference.get(k).iter().sum::<f64>() / phantom.pixels() as f64
        }),
        runtime_seconds,
        maps: Maps {
            truth,
            estimate: est,
            difference,
        },
    })
}

/// Simulate, estimate and score one phantom.
pub fn evaluate(
    estimator: &Estimator,
    phantom: &Phantom,
    schedule: &Schedule,
    noise: &NoiseSpec,
    consts: &PoolConstants,
    seed: u64,
) -> Result<EvalReport> {
    let images = simulate_phantom(phantom, schedule, noise, consts, seed)?;
    let start = Instant::now();
    let estimate = estimator.estimate(schedule, &images)?;
    compare(
        estimator.method(),
        schedule,
        phantom,
        &estimate,
        start.elapsed().as_secs_f64(),
    )
}

/// Reports for every phantom plus MAE pooled over all their pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalSuite {
    pub method: Method,
    pub schedule: String,
    pub pooled_mae: ParamSet<f64>,
    pub runtime_seconds: f64,
    pub reports: Vec<EvalReport>,
}

pub fn evaluate_suite(
    estimator: &Estimator,
    phantoms: &[Phantom],
    schedule: &Schedule,
    noise: &NoiseSpec,
    consts: &PoolConstants,
    seed: u64,
) -> Result<EvalSuite> {
    if phantoms.is_empty() {
        return Err(OtomError::domain("no phantoms to evaluate"));
    }
    let reports = phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            evaluate(
                estimator,
                p,
                schedule,
                noise,
                consts,
                derive_seed(seed, 33, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pixels: usize = phantoms.iter().map(|p| p.pixels()).sum();
    let pooled_mae = ParamSet::from_fn(|k| {
        reports
            .iter()
            .zip(phantoms)
            .map(|(r, p)| r.mae.get(k) * p.pixels() as f64)
            .sum::<f64>()
            / pixels as f64
    });
    Ok(EvalSuite {
        method: estimator.method(),
        schedule: schedule.label().to_string(),
        pooled_mae,
        runtime_seconds: reports.iter().map(|r| r.runtime_seconds).sum(),
        reports,
    })
}

/// MAE table with one row per (schedule, method).
pub fn mae_table_csv(suites: &[EvalSuite]) -> String {
    let mut out = String::from("schedule,method,kmw_Hz,m0m_percent,t2m_us,t1w_ms\n");
    for s in suites {
        let m = &s.pooled_mae;
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4}\n",
            s.schedule,
            s.method.label(),
            m.kmw,
            m.m0m,
            m.t2m,
            m.t1w
        ));
    }
    out
}
