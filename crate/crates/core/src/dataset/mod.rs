//! Randomized training data: tissue sampling, measurement noise, record
//! generation, and the normalization contract between physical quantities
//! and network inputs/targets.

mod format;
mod normalize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OtomError, Result};
use crate::physics::{simulate_fingerprint, Fingerprint, PoolConstants, TissueParams};
use crate::rng::{derive_seed, mix64, SeededRng};
use crate::schedule::{sample_schedule, Interval, Schedule, ScheduleRanges};

pub use format::{
    manifest_path, Dataset, DatasetHeader, DatasetReader, Manifest, DATASET_MAGIC, DATASET_VERSION,
};
pub use normalize::{Example, NormalizationSpec, INPUT_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TissueRanges {
    pub kmw: Interval,
    pub m0m: Interval,
    pub t2m: Interval,
    pub t1w: Interval,
}

impl Default for TissueRanges {
    fn default() -> Self {
        Self {
            kmw: Interval::new(5.0, 100.0),
            m0m: Interval::new(0.02, 0.17),
            t2m: Interval::new(1e-6, 100e-6),
            t1w: Interval::new(0.2, 3.0),
        }
    }
}

impl TissueRanges {
    pub fn validate(&self) -> Result<()> {
        self.kmw.validate("kmw")?;
        self.m0m.validate("m0m")?;
        self.t2m.validate("t2m")?;
        self.t1w.validate("t1w")?;
        if self.kmw.min < 0.0 || self.m0m.min < 0.0 || self.t2m.min <= 0.0 || self.t1w.min <= 0.0 {
            return Err(OtomError::domain("tissue ranges must be positive"));
        }
        Ok(())
    }

    /// Intervals in target order (kmw, m0m, t2m, t1w).
    pub fn intervals(&self) -> [Interval; 4] {
        [self.kmw, self.m0m, self.t2m, self.t1w]
    }

    pub fn contains(&self, t: &TissueParams) -> bool {
        self.intervals()
            .iter()
            .zip(t.to_array())
            .all(|(r, v)| r.contains(v))
    }
}

/// Independent uniform draws of the four tissue parameters.
pub fn sample_tissue(seed: u64, ranges: &TissueRanges) -> Result<TissueParams> {
    ranges.validate()?;
    let mut rng = SeededRng::new(seed);
    Ok(TissueParams::new(
        ranges.kmw.sample(&mut rng),
        ranges.m0m.sample(&mut rng),
        ranges.t2m.sample(&mut rng),
        ranges.t1w.sample(&mut rng),
    ))
}

/// Additive white Gaussian noise, σ = 10^(−SNR/20) relative to the unit
/// (unsaturated, normalized) signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NoiseSpec {
    /// `null` in JSON means noiseless.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { snr_db: 46.0 }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
        }
    }

    pub fn sigma(&self) -> f64 {
        10f64.powf(-self.snr_db / 20.0)
    }
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn add_noise(fp: &Fingerprint, spec: &NoiseSpec, seed: u64) -> Fingerprint {
    let sigma = spec.sigma();
    if sigma == 0.0 {
        return fp.clone();
    }
    let mut rng = SeededRng::new(seed);
    Fingerprint(
        fp.values()
            .iter()
            .map(|v| v + sigma * rng.standard_normal())
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSeeds {
    pub schedule: u64,
    pub tissue: u64,
    pub noise: u64,
}

impl RecordSeeds {
    pub fn for_record(seed: u64, index: u64) -> Self {
        Self {
            schedule: derive_seed(seed, 1, index),
            tissue: derive_seed(seed, 2, index),
            noise: derive_seed(seed, 3, index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub schedule: Schedule,
    pub fingerprint: Fingerprint,
    pub label: TissueParams,
    pub seeds: RecordSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_samples: u64,
    pub seed: u64,
    pub schedule_ranges: ScheduleRanges,
    pub tissue_ranges: TissueRanges,
    pub noise: NoiseSpec,
    pub constants: PoolConstants,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 0,
            schedule_ranges: ScheduleRanges::default(),
            tissue_ranges: TissueRanges::default(),
            noise: NoiseSpec::default(),
            constants: PoolConstants::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule_ranges.validate()?;
        self.tissue_ranges.validate()
    }

    pub fn normalization(&self) -> NormalizationSpec {
        NormalizationSpec::from_ranges(&self.schedule_ranges, &self.tissue_ranges)
    }
}

/// Record `index` of the dataset described by `config`: a fresh random
/// schedule, fresh tissue parameters, and a noisy fingerprint, all from
/// seeds derived from (config.seed, index).
pub fn generate_sample(config: &DatasetConfig, index: u64) -> Result<Sample> {
    regenerate(config, RecordSeeds::for_record(config.seed, index))
}

/// Rebuild a record from its stored seeds.
pub fn regenerate(config: &DatasetConfig, seeds: RecordSeeds) -> Result<Sample> {
    let schedule = sample_schedule(seeds.schedule, &config.schedule_ranges)?;
    let label = sample_tissue(seeds.tissue, &config.tissue_ranges)?;
    let clean = simulate_fingerprint(&label, &config.constants, &schedule.points)?;
    let fingerprint = add_noise(&clean, &config.noise, seeds.noise);
    Ok(Sample {
        schedule,
        fingerprint,
        label,
        seeds,
    })
}

/// Samples that all share one fixed schedule (transfer learning and the
/// fixed-schedule baseline).
pub fn fixed_schedule_samples(
    schedule: &Schedule,
    n: usize,
    seed: u64,
    tissue_ranges: &TissueRanges,
    noise: &NoiseSpec,
    consts: &PoolConstants,
) -> Result<Vec<Sample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seeds = RecordSeeds::for_record(seed, i);
            let label = sample_tissue(seeds.tissue, tissue_ranges)?;
            let clean = simulate_fingerprint(&label, consts, &schedule.points)?;
            Ok(Sample {
                schedule: schedule.clone(),
                fingerprint: add_noise(&clean, noise, seeds.noise),
                label,
                seeds,
            })
        })
        .collect()
}

/// Records are generated in parallel in blocks of this many and written in
/// index order.
const GENERATION_BLOCK: u64 = 4096;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationSummary {
    pub n_samples: u64,
    pub bytes: u64,
    pub manifest_sha256: String,
    pub seconds: f64,
}

/// Write `config.n_samples` records to `out_path` plus a JSON manifest.
///
/// Output depends only on `config`, not on the worker count. Data is
/// streamed to `<out_path>.partial` and renamed on success; the partial file
/// is removed on failure.
pub fn generate_dataset(
    config: &DatasetConfig,
    out_path: &std::path::Path,
) -> Result<GenerationSummary> {
    config.validate()?;
    let start = std::time::Instant::now();
    let mut writer = format::DatasetWriter::create(out_path, config)?;
    let result = (|| {
        let mut index = 0;
        while index < config.n_samples {
            let end = (index + GENERATION_BLOCK).min(config.n_samples);
            let block: Vec<Sample> = (index..end)
                .into_par_iter()
                .map(|i| generate_sample(config, i))
                .collect::<Result<_>>()?;
            for sample in &block {
                writer.write(sample)?;
            }
            index = end;
        }
        Ok(())
    })();
    match result {
        Ok(()) => {
            let (bytes, digest) = writer.finish()?;
            Ok(GenerationSummary {
                n_samples: config.n_samples,
                bytes,
                manifest_sha256: digest,
                seconds: start.elapsed().as_secs_f64(),
            })
        }
        Err(e) => {
            writer.abort();
            Err(e)
        }
    }
}

/// Deterministic 90/10 train/validation split keyed on the record index.
pub fn is_validation(index: u64) -> bool {
    mix64(index ^ 0x7370_6c69_7400_0000).is_multiple_of(10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tissue_sampling_deterministic_and_in_range() {
        let r = TissueRanges::default();
        assert_eq!(sample_tissue(4, &r).unwrap(), sample_tissue(4, &r).unwrap());
        let mut mean = 0.0;
        let n = 100_000;
        for seed in 0..n {
            let t = sample_tissue(seed, &r).unwrap();
            assert!(r.contains(&t));
            mean += t.kmw;
        }
        mean /= n as f64;
        assert!((mean - 52.5).abs() < 0.5, "{mean}");
    }

    #[test]
    fn inverted_tissue_range_rejected() {
        let r = TissueRanges {
            t1w: Interval::new(3.0, 0.2),
            ..Default::default()
        };
        assert!(sample_tissue(0, &r).is_err());
    }

    #[test]
    fn noise_sigma() {
        assert!((NoiseSpec::default().sigma() - 5.011_872_336e-3).abs() < 1e-12);
        assert_eq!(NoiseSpec::noiseless().sigma(), 0.0);
        let fp = Fingerprint(vec![0.3, 0.5, 0.9]);
        assert_eq!(add_noise(&fp, &NoiseSpec::noiseless(), 3), fp);
        assert_eq!(
            add_noise(&fp, &NoiseSpec::default(), 3),
            add_noise(&fp, &NoiseSpec::default(), 3)
        );
    }

    #[test]
    fn noise_std_matches_sigma() {
        let n = 1_000_000;
        let fp = Fingerprint(vec![0.5; n]);
        let spec = NoiseSpec::default();
        let noisy = add_noise(&fp, &spec, 77);
        let d: Vec<f64> = noisy.values().iter().map(|v| v - 0.5).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let rel = (var.sqrt() - spec.sigma()).abs() / spec.sigma();
        assert!(rel < 0.005, "{rel}");
    }

    #[test]
    fn noise_spec_json() {
        let s = serde_json::to_string(&NoiseSpec::noiseless()).unwrap();
        assert_eq!(s, r#"{"snrDb":null}"#);
        let back: NoiseSpec = serde_json::from_str(&s).unwrap();
        assert!(back.snr_db.is_infinite());
    }

    #[test]
    fn regenerates_from_seeds() {
        let cfg = DatasetConfig::default();
        let s = generate_sample(&cfg, 17).unwrap();
        assert_eq!(regenerate(&cfg, s.seeds).unwrap(), s);
        assert_eq!(s.fingerprint.len(), s.schedule.len());
    }

    #[test]
    fn split_is_roughly_ninety_ten() {
        let val = (0..100_000u64).filter(|&i| is_validation(i)).count();
        assert!((9_500..10_500).contains(&val), "{val}");
    }
}
