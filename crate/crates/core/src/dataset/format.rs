//! Binary dataset file and its JSON manifest.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        "OTOMDS1"                 7 bytes
//! version      u32
//! n_samples    u64
//! seed         u64
//! scan ranges  b1, omega, ts, td         4 × (min f64, max f64)
//! length range n_min u32, n_max u32
//! tissue ranges kmw, m0m, t2m, t1w       4 × (min f64, max f64)
//! snr_db       f64                       +inf when noiseless
//! manifest     SHA-256 of the manifest   32 bytes
//! records      n_samples × record
//!
//! record:
//!   n            u16
//!   schedule     n × (b1, omega, ts, td) f32
//!   fingerprint  n × f32
//!   label        kmw, m0m, t2m, t1w      4 × f32
//!   seeds        schedule, tissue, noise 3 × u64
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetConfig, NoiseSpec, RecordSeeds, Sample, TissueRanges};
use crate::error::{OtomError, Result};
use crate::physics::{Fingerprint, ScanPoint, TissueParams};
use crate::schedule::{Interval, Schedule, ScheduleRanges};

pub const DATASET_MAGIC: &[u8; 7] = b"OTOMDS1";
pub const DATASET_VERSION: u32 = 1;

/// JSON sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
}

impl Manifest {
    pub fn new(config: &DatasetConfig) -> Self {
        Self {
            format: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            version: DATASET_VERSION,
            config: config.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// `<dataset>.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_samples: u64,
    pub seed: u64,
    pub schedule_ranges: ScheduleRanges,
    pub tissue_ranges: TissueRanges,
    pub noise: NoiseSpec,
    pub manifest_sha256: [u8; 32],
}

impl DatasetHeader {
    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.n_samples.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for r in self.schedule_ranges.intervals() {
            w.write_all(&r.min.to_le_bytes())?;
            w.write_all(&r.max.to_le_bytes())?;
        }
        w.write_all(&(self.schedule_ranges.n_min as u32).to_le_bytes())?;
        w.write_all(&(self.schedule_ranges.n_max as u32).to_le_bytes())?;
        for r in self.tissue_ranges.intervals() {
            w.write_all(&r.min.to_le_bytes())?;
            w.write_all(&r.max.to_le_bytes())?;
        }
        w.write_all(&self.noise.snr_db.to_le_bytes())?;
        w.write_all(&self.manifest_sha256)
    }

    fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(OtomError::Format("not an OTOMDS1 dataset file".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(OtomError::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let n_samples = read_u64(r)?;
        let seed = read_u64(r)?;
        let interval = |r: &mut dyn Read| -> Result<Interval> {
            Ok(Interval::new(read_f64(r)?, read_f64(r)?))
        };
        let (b1, omega, ts, td) = (interval(r)?, interval(r)?, interval(r)?, interval(r)?);
        let n_min = read_u32(r)? as usize;
        let n_max = read_u32(r)? as usize;
        let schedule_ranges = ScheduleRanges {
            b1,
            omega,
            ts,
            td,
            n_min,
            n_max,
        };
        let tissue_ranges = TissueRanges {
            kmw: interval(r)?,
            m0m: interval(r)?,
            t2m: interval(r)?,
            t1w: interval(r)?,
        };
        let noise = NoiseSpec {
            snr_db: read_f64(r)?,
        };
        let mut manifest_sha256 = [0u8; 32];
        r.read_exact(&mut manifest_sha256)?;
        Ok(Self {
            version,
            n_samples,
            seed,
            schedule_ranges,
            tissue_ranges,
            noise,
            manifest_sha256,
        })
    }
}

fn read_u16(r: &mut (impl Read + ?Sized)) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut (impl Read + ?Sized)) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut (impl Read + ?Sized)) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut (impl Read + ?Sized)) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_f32(r: &mut (impl Read + ?Sized)) -> std::io::Result<f64> {
    Ok(f32::from_bits(read_u32(r)?) as f64)
}

fn encode_record(sample: &Sample, buf: &mut Vec<u8>) -> Result<()> {
    let n = sample.schedule.len();
    if n != sample.fingerprint.len() {
        return Err(OtomError::domain(
            "fingerprint length differs from schedule length",
        ));
    }
    let n16 = u16::try_from(n).map_err(|_| OtomError::domain("record too long"))?;
    buf.extend_from_slice(&n16.to_le_bytes());
    for p in &sample.schedule.points {
        for v in p.to_array() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &v in sample.fingerprint.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for v in sample.label.to_array() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for s in [
        sample.seeds.schedule,
        sample.seeds.tissue,
        sample.seeds.noise,
    ] {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    Ok(())
}

fn decode_record(r: &mut impl Read) -> Result<Sample> {
    let n = read_u16(r)? as usize;
    if n == 0 {
        return Err(OtomError::Format("record with zero scans".into()));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(ScanPoint::new(
            read_f32(r)?,
            read_f32(r)?,
            read_f32(r)?,
            read_f32(r)?,
        ));
    }
    let fingerprint = (0..n)
        .map(|_| read_f32(r))
        .collect::<std::io::Result<Vec<_>>>()?;
    let label = TissueParams::new(read_f32(r)?, read_f32(r)?, read_f32(r)?, read_f32(r)?);
    let seeds = RecordSeeds {
        schedule: read_u64(r)?,
        tissue: read_u64(r)?,
        noise: read_u64(r)?,
    };
    Ok(Sample {
        schedule: Schedule::new(points)?,
        fingerprint: Fingerprint(fingerprint),
        label,
        seeds,
    })
}

pub(super) struct DatasetWriter {
    out: Option<BufWriter<File>>,
    partial: PathBuf,
    target: PathBuf,
    manifest: Vec<u8>,
    digest: [u8; 32],
    buf: Vec<u8>,
    bytes: u64,
}

impl DatasetWriter {
    pub(super) fn create(path: &Path, config: &DatasetConfig) -> Result<Self> {
        let manifest = Manifest::new(config).to_bytes();
        let digest: [u8; 32] = Sha256::digest(&manifest).into();
        let header = DatasetHeader {
            version: DATASET_VERSION,
            n_samples: config.n_samples,
            seed: config.seed,
            schedule_ranges: config.schedule_ranges,
            tissue_ranges: config.tissue_ranges,
            noise: config.noise,
            manifest_sha256: digest,
        };
        let partial = partial_path(path);
        let mut out = BufWriter::new(File::create(&partial)?);
        let mut buf = Vec::new();
        header.write(&mut buf)?;
        out.write_all(&buf)?;
        Ok(Self {
            out: Some(out),
            partial,
            target: path.to_path_buf(),
            manifest,
            digest,
            bytes: buf.len() as u64,
            buf,
        })
    }

    pub(super) fn write(&mut self, sample: &Sample) -> Result<()> {
        self.buf.clear();
        encode_record(sample, &mut self.buf)?;
        self.out
            .as_mut()
            .expect("writer still open")
            .write_all(&self.buf)?;
        self.bytes += self.buf.len() as u64;
        Ok(())
    }

    /// Flush, move into place, and write the manifest.
    pub(super) fn finish(mut self) -> Result<(u64, String)> {
        let out = self.out.take().expect("writer still open");
        let done = (|| -> Result<()> {
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            fs::rename(&self.partial, &self.target)?;
            fs::write(manifest_path(&self.target), &self.manifest)?;
            Ok(())
        })();
        if let Err(e) = done {
            let _ = fs::remove_file(&self.partial);
            return Err(e);
        }
        Ok((self.bytes, hex(&self.digest)))
    }

    pub(super) fn abort(mut self) {
        self.out.take();
        let _ = fs::remove_file(&self.partial);
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sequential record reader over a dataset file.
pub struct DatasetReader {
    header: DatasetHeader,
    input: BufReader<File>,
    remaining: u64,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let header = DatasetHeader::read(&mut input)?;
        Ok(Self {
            remaining: header.n_samples,
            header,
            input,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(decode_record(&mut self.input).map_err(|e| match e {
            OtomError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                OtomError::Format("dataset file is truncated".into())
            }
            other => other,
        }))
    }
}

/// A dataset loaded fully into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = DatasetReader::open(path)?;
        let header = reader.header().clone();
        let samples = reader.by_ref().collect::<Result<Vec<_>>>()?;
        let mut trailing = [0u8; 1];
        if reader.input.read(&mut trailing)? != 0 {
            return Err(OtomError::Format("trailing bytes after last record".into()));
        }
        Ok(Self { header, samples })
    }

    /// Check the header digest against the manifest sidecar.
    pub fn verify_manifest(&self, path: impl AsRef<Path>) -> Result<Manifest> {
        let bytes = fs::read(manifest_path(path.as_ref()))?;
        let digest: [u8; 32] = Sha256::digest(&bytes).into();
        if digest != self.header.manifest_sha256 {
            return Err(OtomError::Format("manifest digest mismatch".into()));
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV view: one row per scan.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out =
            String::from("record,index,b1_uT,omega_ppm,ts_s,td_s,signal,kmw,m0m,t2m,t1w\n");
        for (r, s) in self.samples.iter().enumerate() {
            let l = s.label;
            for (i, (p, v)) in s
                .schedule
                .points
                .iter()
                .zip(s.fingerprint.values())
                .enumerate()
            {
                writeln!(
                    out,
                    "{r},{i},{},{},{},{},{v},{},{},{},{}",
                    p.b1, p.omega, p.ts, p.td, l.kmw, l.m0m, l.t2m, l.t1w
                )
                .unwrap();
            }
        }
        out
    }
}
