//! OTOMNN1 weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    "OTOMNN1"
//! version  u32 (= 1)
//! kind     u8  (0 = bi-LSTM, 1 = FCNN)
//! bi-LSTM: layers u32, hidden u32, inputDim u32, head rows u32, head cols u32
//! FCNN:    inputLen u32, hidden count u32, hidden widths u32…,
//!          schedule name (u32 length + UTF-8), schedule points inputLen × 4 f64,
//!          input scaling inputLen × (mean f64, std f64)
//! normalization  18 f64: signal, scan [b1, omega, ts, td], then tissue
//!                [kmw, m0m, t2m, t1w], each as (min, max)
//! param count    u64
//! params         f64…, in the model's tensor_order()
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BiLstm, BiLstmConfig, Fcnn, FcnnConfig, Regressor, TrainHistory, OUTPUTS};
use crate::dataset::NormalizationSpec;
use crate::error::{OtomError, Result};
use crate::physics::ScanPoint;
use crate::schedule::{Interval, Schedule};

pub const WEIGHTS_MAGIC: &[u8; 7] = b"OTOMNN1";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ModelKind {
    BiLstm,
    Fcnn,
}

#[derive(Debug, Clone)]
pub enum Model {
    BiLstm(BiLstm),
    Fcnn(Fcnn),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::BiLstm(_) => ModelKind::BiLstm,
            Model::Fcnn(_) => ModelKind::Fcnn,
        }
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        match self {
            Model::BiLstm(m) => &m.normalization,
            Model::Fcnn(m) => &m.normalization,
        }
    }

    pub fn into_bilstm(self) -> Result<BiLstm> {
        match self {
            Model::BiLstm(m) => Ok(m),
            Model::Fcnn(_) => Err(OtomError::Format(
                "expected bi-LSTM weights, found FCNN".into(),
            )),
        }
    }

    pub fn into_fcnn(self) -> Result<Fcnn> {
        match self {
            Model::Fcnn(m) => Ok(m),
            Model::BiLstm(_) => Err(OtomError::Format(
                "expected FCNN weights, found bi-LSTM".into(),
            )),
        }
    }
}

impl From<BiLstm> for Model {
    fn from(m: BiLstm) -> Self {
        Model::BiLstm(m)
    }
}

impl From<Fcnn> for Model {
    fn from(m: Fcnn) -> Self {
        Model::Fcnn(m)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| OtomError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let params = match model {
        Model::BiLstm(m) => {
            out.push(0);
            let c = m.config();
            for v in [c.layers, c.hidden, c.input_dim, OUTPUTS, 2 * c.hidden] {
                put_u32(&mut out, v)?;
            }
            m.params()
        }
        Model::Fcnn(m) => {
            out.push(1);
            put_u32(&mut out, m.input_len())?;
            put_u32(&mut out, m.config().hidden.len())?;
            for &h in &m.config().hidden {
                put_u32(&mut out, h)?;
            }
            let name = m.schedule().name.as_deref().unwrap_or("");
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            for p in &m.schedule().points {
                for v in p.to_array() {
                    put_f64(&mut out, v);
                }
            }
            for &(mean, sd) in m.input_scaling() {
                put_f64(&mut out, mean);
                put_f64(&mut out, sd);
            }
            m.params()
        }
    };
    let norm = model.normalization();
    for r in std::iter::once(&norm.signal)
        .chain(&norm.scan)
        .chain(&norm.tissue)
    {
        put_f64(&mut out, r.min);
        put_f64(&mut out, r.max);
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &p in params {
        put_f64(&mut out, p);
    }
    Ok(out)
}

struct Decoder<'a>(Cursor<&'a [u8]>);

impl Decoder<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| OtomError::Format("weight file is truncated".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn remaining(&self) -> usize {
        self.0.get_ref().len() - self.0.position() as usize
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut d = Decoder(Cursor::new(bytes));
    if &d.bytes::<7>()? != WEIGHTS_MAGIC {
        return Err(OtomError::Format("not an OTOMNN1 weight file".into()));
    }
    let version = u32::from_le_bytes(d.bytes()?);
    if version != WEIGHTS_VERSION {
        return Err(OtomError::Format(format!(
            "unsupported weight file version {version}"
        )));
    }
    enum Arch {
        BiLstm(BiLstmConfig),
        Fcnn(FcnnConfig, Schedule, Vec<(f64, f64)>),
    }
    let arch = match d.bytes::<1>()?[0] {
        0 => {
            let (layers, hidden, input_dim) = (d.u32()?, d.u32()?, d.u32()?);
            let (rows, cols) = (d.u32()?, d.u32()?);
            if rows != OUTPUTS || cols != 2 * hidden {
                return Err(OtomError::Format(format!(
                    "unexpected head shape {rows}×{cols}"
                )));
            }
            Arch::BiLstm(BiLstmConfig {
                layers,
                hidden,
                input_dim,
            })
        }
        1 => {
            let n = d.u32()?;
            let count = d.u32()?;
            if count > d.remaining() / 4 {
                return Err(OtomError::Format("implausible FCNN layer count".into()));
            }
            let hidden = (0..count).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
            let name_len = d.u32()?;
            if name_len > d.remaining() {
                return Err(OtomError::Format("weight file is truncated".into()));
            }
            let mut name = vec![0u8; name_len];
            d.0.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| OtomError::Format("schedule name is not UTF-8".into()))?;
            if n > d.remaining() / 48 {
                return Err(OtomError::Format("weight file is truncated".into()));
            }
            let points = (0..n)
                .map(|_| Ok(ScanPoint::new(d.f64()?, d.f64()?, d.f64()?, d.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            let mut schedule = Schedule::new(points)?;
            if !name.is_empty() {
                schedule = schedule.named(name);
            }
            let scaling = (0..n)
                .map(|_| Ok((d.f64()?, d.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            Arch::Fcnn(FcnnConfig { hidden }, schedule, scaling)
        }
        k => return Err(OtomError::Format(format!("unknown model kind {k}"))),
    };
    let mut ranges = [Interval::new(0.0, 0.0); 9];
    for r in &mut ranges {
        *r = Interval::new(d.f64()?, d.f64()?);
    }
    let normalization = NormalizationSpec {
        signal: ranges[0],
        scan: [ranges[1], ranges[2], ranges[3], ranges[4]],
        tissue: [ranges[5], ranges[6], ranges[7], ranges[8]],
    };
    let count = d.u64()? as usize;
    if d.remaining() != count * 8 {
        return Err(OtomError::Format(format!(
            "expected {count} parameters, found {} bytes",
            d.remaining()
        )));
    }
    let params = (0..count).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    Ok(match arch {
        Arch::BiLstm(c) => Model::BiLstm(BiLstm::from_params(c, normalization, params)?),
        Arch::Fcnn(c, s, k) => Model::Fcnn(Fcnn::from_params(c, s, normalization, k, params)?),
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

/// `<weights>.history.json`
pub fn history_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".history.json");
    PathBuf::from(s)
}

pub fn save_history(weights: &Path, history: &TrainHistory) -> Result<()> {
    fs::write(
        history_path(weights),
        serde_json::to_string_pretty(history)? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::fixtures;

    #[test]
    fn bilstm_round_trip() {
        let m = BiLstm::new(
            BiLstmConfig {
                layers: 2,
                hidden: 3,
                input_dim: 5,
            },
            Default::default(),
            1,
        )
        .unwrap();
        let bytes = encode_model(&m.clone().into()).unwrap();
        let back = decode_model(&bytes).unwrap().into_bilstm().unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.normalization, m.normalization);
        assert_eq!(encode_model(&back.into()).unwrap(), bytes);
    }

    #[test]
    fn fcnn_round_trip_keeps_schedule() {
        let s = fixtures::pseudo_random(10).unwrap();
        let mut m = Fcnn::new(
            FcnnConfig { hidden: vec![5, 3] },
            s.clone(),
            Default::default(),
            2,
        )
        .unwrap();
        let ex = |v: f64| crate::dataset::Example {
            inputs: vec![[v; 5]; 10],
            target: [0.0; 4],
        };
        m.fit_input_scaling(&[ex(0.2), ex(0.6)]).unwrap();
        let back = decode_model(&encode_model(&m.clone().into()).unwrap())
            .unwrap()
            .into_fcnn()
            .unwrap();
        assert_eq!(back.schedule(), &s);
        assert_eq!(back.params(), m.params());
        assert_eq!(back.input_scaling(), m.input_scaling());
    }

    #[test]
    fn rejects_corruption() {
        let m = BiLstm::new(
            BiLstmConfig {
                layers: 1,
                hidden: 2,
                input_dim: 5,
            },
            Default::default(),
            3,
        )
        .unwrap();
        let bytes = encode_model(&m.into()).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_model(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_model(&extra).is_err());
    }
}
