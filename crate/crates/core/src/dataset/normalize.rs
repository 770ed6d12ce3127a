use serde::{Deserialize, Serialize};

use super::{Sample, TissueRanges};
use crate::physics::{ScanPoint, TissueParams};
use crate::schedule::{Interval, Schedule, ScheduleRanges};

/// Channels per time step: [signal, b1, omega, ts, td].
pub const INPUT_CHANNELS: usize = 5;

/// Nominal signal range mapped onto [-1, 1]. It is roughly mean ± one
/// standard deviation of signals drawn from the default sampling ranges;
/// without this rescaling the signal varies too little for the LSTM gates
/// and training stalls for several epochs.
pub const SIGNAL_RANGE: Interval = Interval {
    min: 0.74,
    max: 0.99,
};

/// Per-channel affine maps. Inputs (the signal and the four scan
/// parameters) go onto [-1, 1], targets onto [0, 1]. Values outside a
/// range are extrapolated linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NormalizationSpec {
    pub signal: Interval,
    /// b1, omega, ts, td
    pub scan: [Interval; 4],
    /// kmw, m0m, t2m, t1w
    pub tissue: [Interval; 4],
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::from_ranges(&ScheduleRanges::default(), &TissueRanges::default())
    }
}

/// One network training pair in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<[f64; INPUT_CHANNELS]>,
    pub target: [f64; 4],
}

fn to_unit(r: &Interval, v: f64) -> f64 {
    (v - r.min) / (r.max - r.min)
}

fn to_centered(r: &Interval, v: f64) -> f64 {
    2.0 * to_unit(r, v) - 1.0
}

fn from_unit(r: &Interval, u: f64) -> f64 {
    r.min + u * (r.max - r.min)
}

impl NormalizationSpec {
    pub fn from_ranges(scan: &ScheduleRanges, tissue: &TissueRanges) -> Self {
        Self {
            signal: SIGNAL_RANGE,
            scan: scan.intervals(),
            tissue: tissue.intervals(),
        }
    }

    pub fn scan_channels(&self, p: &ScanPoint) -> [f64; 4] {
        let v = p.to_array();
        std::array::from_fn(|k| to_centered(&self.scan[k], v[k]))
    }

    /// Normalized scan channels for a whole schedule; warns once if any
    /// point lies outside the normalization ranges.
    pub fn schedule_channels(&self, schedule: &Schedule) -> Vec<[f64; 4]> {
        let out: Vec<[f64; 4]> = schedule
            .points
            .iter()
            .map(|p| self.scan_channels(p))
            .collect();
        if out.iter().flatten().any(|u| !(-1.0..=1.0).contains(u)) {
            log::warn!(
                "schedule `{}` exceeds the normalization ranges; inputs are extrapolated",
                schedule.label()
            );
        }
        out
    }

    /// Per-step inputs [S, b1, omega, ts, td] from precomputed scan channels.
    pub fn inputs_from_channels(
        &self,
        channels: &[[f64; 4]],
        signal: &[f64],
    ) -> Vec<[f64; INPUT_CHANNELS]> {
        channels
            .iter()
            .zip(signal)
            .map(|(c, &s)| [to_centered(&self.signal, s), c[0], c[1], c[2], c[3]])
            .collect()
    }

    pub fn normalize_input(
        &self,
        schedule: &Schedule,
        signal: &[f64],
    ) -> Vec<[f64; INPUT_CHANNELS]> {
        self.inputs_from_channels(&self.schedule_channels(schedule), signal)
    }

    pub fn normalize_target(&self, t: &TissueParams) -> [f64; 4] {
        let v = t.to_array();
        std::array::from_fn(|k| to_unit(&self.tissue[k], v[k]))
    }

    pub fn denormalize_target(&self, u: &[f64; 4]) -> TissueParams {
        TissueParams::from_array(std::array::from_fn(|k| from_unit(&self.tissue[k], u[k])))
    }

    pub fn example(&self, sample: &Sample) -> Example {
        Example {
            inputs: self.normalize_input(&sample.schedule, sample.fingerprint.values()),
            target: self.normalize_target(&sample.label),
        }
    }
}
