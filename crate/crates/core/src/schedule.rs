//! MRF schedules: random variable-length sampling for training, CSV
//! persistence, and the bundled pseudo-random evaluation fixtures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OtomError, Result};
use crate::physics::ScanPoint;
use crate::rng::SeededRng;

pub const MAX_SCHEDULE_LEN: usize = 4096;
pub const CSV_HEADER: &str = "index,b1_uT,omega_ppm,ts_s,td_s";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub points: Vec<ScanPoint>,
    pub name: Option<String>,
}

impl Schedule {
    pub fn new(points: Vec<ScanPoint>) -> Result<Self> {
        if points.is_empty() || points.len() > MAX_SCHEDULE_LEN {
            return Err(OtomError::domain(format!(
                "schedule length {} outside 1..={MAX_SCHEDULE_LEN}",
                points.len()
            )));
        }
        Ok(Self { points, name: None })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed")
    }

    /// First `n` scans, order preserved.
    pub fn truncate(&self, n: usize) -> Result<Schedule> {
        if n == 0 || n > self.len() {
            return Err(OtomError::domain(format!(
                "cannot truncate a length-{} schedule to {n}",
                self.len()
            )));
        }
        Ok(Schedule {
            points: self.points[..n].to_vec(),
            name: self.name.as_ref().map(|s| format!("{s}[..{n}]")),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            writeln!(out, "{i},{},{},{},{}", p.b1, p.omega, p.ts, p.td).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schedule> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut schedule = Self::parse_csv(&text, path)?;
        schedule.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Ok(schedule)
    }

    /// Parse schedule CSV. Values outside the default training ranges are
    /// accepted with a warning.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<Schedule> {
        let parse_err = |line: usize, message: String| OtomError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == CSV_HEADER => {}
            Some((_, header)) => {
                return Err(parse_err(
                    1,
                    format!("expected header `{CSV_HEADER}`, got `{header}`"),
                ))
            }
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(parse_err(
                    lineno,
                    format!("expected 5 columns, found {}", fields.len()),
                ));
            }
            let mut vals = [0.0; 4];
            for (k, (slot, name)) in vals
                .iter_mut()
                .zip(["b1_uT", "omega_ppm", "ts_s", "td_s"])
                .enumerate()
            {
                *slot = fields[k + 1]
                    .parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("{name}: {e}")))?;
            }
            let point = ScanPoint::new(vals[0], vals[1], vals[2], vals[3]);
            point
                .validate()
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            if !ScheduleRanges::default().contains(&point) {
                log::warn!(
                    "{}:{lineno}: scan point {point:?} lies outside the training ranges",
                    origin.display()
                );
            }
            points.push(point);
        }
        if points.is_empty() {
            return Err(OtomError::domain(format!(
                "{}: schedule file has no scan points",
                origin.display()
            )));
        }
        Schedule::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(OtomError::domain(format!(
                "{what} range [{}, {}] is inverted or not finite",
                self.min, self.max
            )))
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        rng.uniform(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ScheduleRanges {
    pub b1: Interval,
    pub omega: Interval,
    pub ts: Interval,
    pub td: Interval,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for ScheduleRanges {
    fn default() -> Self {
        Self {
            b1: Interval::new(0.5, 2.0),
            omega: Interval::new(8.0, 50.0),
            ts: Interval::new(0.4, 2.0),
            td: Interval::new(3.5, 5.0),
            n_min: 10,
            n_max: 40,
        }
    }
}

impl ScheduleRanges {
    pub fn validate(&self) -> Result<()> {
        self.b1.validate("b1")?;
        self.omega.validate("omega")?;
        self.ts.validate("ts")?;
        self.td.validate("td")?;
        if self.b1.min < 0.0 || self.ts.min < 0.0 || self.td.min < 0.0 {
            return Err(OtomError::domain(
                "b1, ts and td ranges must be non-negative",
            ));
        }
        if self.n_min == 0 || self.n_min > self.n_max || self.n_max > MAX_SCHEDULE_LEN {
            return Err(OtomError::domain(format!(
                "length range [{}, {}] invalid",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &ScanPoint) -> bool {
        self.b1.contains(p.b1)
            && self.omega.contains(p.omega)
            && self.ts.contains(p.ts)
            && self.td.contains(p.td)
    }

    /// Intervals in input-channel order (b1, omega, ts, td).
    pub fn intervals(&self) -> [Interval; 4] {
        [self.b1, self.omega, self.ts, self.td]
    }

    fn sample_point(&self, rng: &mut SeededRng) -> ScanPoint {
        ScanPoint::new(
            self.b1.sample(rng),
            self.omega.sample(rng),
            self.ts.sample(rng),
            self.td.sample(rng),
        )
    }
}

/// Random schedule: length uniform on `n_min..=n_max`, then each scan
/// parameter drawn independently and uniformly from its range.
pub fn sample_schedule(seed: u64, ranges: &ScheduleRanges) -> Result<Schedule> {
    ranges.validate()?;
    let mut rng = SeededRng::new(seed);
    let n = rng.uniform_int(ranges.n_min, ranges.n_max);
    sample_points(&mut rng, n, ranges)
}

/// Random schedule of a fixed length.
pub fn sample_fixed_length(seed: u64, n: usize, ranges: &ScheduleRanges) -> Result<Schedule> {
    ranges.validate()?;
    let mut rng = SeededRng::new(seed);
    sample_points(&mut rng, n, ranges)
}

fn sample_points(rng: &mut SeededRng, n: usize, ranges: &ScheduleRanges) -> Result<Schedule> {
    Schedule::new((0..n).map(|_| ranges.sample_point(rng)).collect())
}

/// Bundled pseudo-random evaluation schedules PR#10, PR#20, PR#30, PR#40.
pub mod fixtures {
    use std::path::Path;

    use super::Schedule;
    use crate::error::{OtomError, Result};

    pub const LENGTHS: [usize; 4] = [10, 20, 30, 40];

    /// Seed used to generate the fixture of length `n`
    /// (`sample_fixed_length(seed, n, &ScheduleRanges::default())`).
    pub fn seed_for(n: usize) -> u64 {
        0x5052_0000 + n as u64
    }

    const PR10: &str = include_str!("../fixtures/PR10.csv");
    const PR20: &str = include_str!("../fixtures/PR20.csv");
    const PR30: &str = include_str!("../fixtures/PR30.csv");
    const PR40: &str = include_str!("../fixtures/PR40.csv");

    pub fn pseudo_random(n: usize) -> Result<Schedule> {
        let text = match n {
            10 => PR10,
            20 => PR20,
            30 => PR30,
            40 => PR40,
            _ => {
                return Err(OtomError::domain(format!(
                    "no bundled PR schedule of length {n}"
                )))
            }
        };
        let name = format!("PR{n}");
        Ok(Schedule::parse_csv(text, Path::new(&name))?.named(name))
    }

    /// Resolve `PR10`..`PR40` (also `PR#40`) to a bundled fixture, anything
    /// else to a CSV path.
    pub fn resolve(spec: &str) -> Result<Schedule> {
        let key = spec.trim().to_ascii_uppercase().replace('#', "");
        if let Some(n) = key.strip_prefix("PR").and_then(|s| s.parse::<usize>().ok()) {
            if LENGTHS.contains(&n) {
                return pseudo_random(n);
            }
        }
        Schedule::load(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampling_is_deterministic() {
        let r = ScheduleRanges::default();
        assert_eq!(
            sample_schedule(11, &r).unwrap(),
            sample_schedule(11, &r).unwrap()
        );
        assert_ne!(
            sample_schedule(11, &r).unwrap(),
            sample_schedule(12, &r).unwrap()
        );
    }

    #[test]
    fn samples_respect_ranges() {
        let r = ScheduleRanges::default();
        for seed in 0..10_000 {
            let s = sample_schedule(seed, &r).unwrap();
            assert!((10..=40).contains(&s.len()));
            assert!(s.points.iter().all(|p| r.contains(p)));
        }
    }

    #[test]
    fn mean_b1_is_range_midpoint() {
        let r = ScheduleRanges::default();
        let mut rng = SeededRng::new(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.b1.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.25).abs() < 0.01, "{mean}");
    }

    #[test]
    fn inverted_range_rejected() {
        let r = ScheduleRanges {
            b1: Interval::new(2.0, 0.5),
            ..Default::default()
        };
        assert!(sample_schedule(0, &r).is_err());
        let r = ScheduleRanges {
            n_min: 41,
            ..Default::default()
        };
        assert!(sample_schedule(0, &r).is_err());
    }

    #[test]
    fn truncation() {
        let s = fixtures::pseudo_random(40).unwrap();
        assert_eq!(s.truncate(40).unwrap().points, s.points);
        assert_eq!(s.truncate(1).unwrap().points, vec![s.points[0]]);
        assert!(s.truncate(0).is_err());
        assert!(s.truncate(41).is_err());
    }

    #[test]
    fn header_only_is_error() {
        let e = Schedule::parse_csv(&format!("{CSV_HEADER}\n"), Path::new("x.csv"));
        assert!(matches!(e, Err(OtomError::Domain(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{CSV_HEADER}\n0,1,10,1,4\n1,1,ten,1,4\n");
        match Schedule::parse_csv(&text, Path::new("x.csv")) {
            Err(OtomError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("omega_ppm"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = format!("{CSV_HEADER}\n0,1,10,1\n");
        assert!(matches!(
            Schedule::parse_csv(&short, Path::new("x.csv")),
            Err(OtomError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn out_of_range_values_load() {
        let text = format!("{CSV_HEADER}\n0,3.5,60,1,4\n");
        let s = Schedule::parse_csv(&text, Path::new("x.csv")).unwrap();
        assert_eq!(s.points[0].b1, 3.5);
    }

    #[test]
    fn fixtures_load_with_expected_lengths() {
        for n in fixtures::LENGTHS {
            let s = fixtures::pseudo_random(n).unwrap();
            assert_eq!(s.len(), n);
            assert_eq!(s.label(), format!("PR{n}"));
        }
        assert_eq!(fixtures::resolve("PR#40").unwrap().len(), 40);
    }

    #[test]
    fn fixtures_regenerate_from_seeds() {
        for n in fixtures::LENGTHS {
            let want =
                sample_fixed_length(fixtures::seed_for(n), n, &ScheduleRanges::default()).unwrap();
            assert_eq!(fixtures::pseudo_random(n).unwrap().points, want.points);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = sample_schedule(5, &ScheduleRanges::default()).unwrap();
        s.save(&path).unwrap();
        let back = Schedule::load(&path).unwrap();
        assert_eq!(back.points, s.points);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(seed in any::<u64>()) {
            let s = sample_schedule(seed, &ScheduleRanges::default()).unwrap();
            let back = Schedule::parse_csv(&s.to_csv(), Path::new("p.csv")).unwrap();
            prop_assert_eq!(back.points, s.points);
        }
    }
}
