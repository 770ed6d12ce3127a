//! Fully connected baseline bound to one acquisition schedule. It sees only
//! the N signal values, so it cannot be reused on another schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bilstm::PREDICT_CHUNK;
use super::linalg::{gemm, Mat};
use super::{l1_loss_grad, Regressor, OUTPUTS};
use crate::dataset::{Example, NormalizationSpec, INPUT_CHANNELS};
use crate::error::{OtomError, Result};
use crate::physics::TissueParams;
use crate::rng::SeededRng;
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FcnnConfig {
    pub hidden: Vec<usize>,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256; 4],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fcnn {
    config: FcnnConfig,
    schedule: Schedule,
    /// (fan_in, fan_out) per dense layer; the last one is the output layer.
    shapes: Vec<(usize, usize)>,
    params: Vec<f64>,
    /// Per-step signal standardization (mean, std) applied before layer 0.
    input_scaling: Vec<(f64, f64)>,
    pub normalization: NormalizationSpec,
}

fn layer_shapes(inputs: usize, hidden: &[usize]) -> Vec<(usize, usize)> {
    let mut dims = vec![inputs];
    dims.extend_from_slice(hidden);
    dims.push(OUTPUTS);
    dims.windows(2).map(|w| (w[0], w[1])).collect()
}

impl Fcnn {
    /// Weights uniform in ±1/√fan_in, hidden biases 0, output bias 0.5.
    pub fn new(
        config: FcnnConfig,
        schedule: Schedule,
        normalization: NormalizationSpec,
        seed: u64,
    ) -> Result<Self> {
        if config.hidden.contains(&0) {
            return Err(OtomError::domain("hidden layer widths must be positive"));
        }
        let shapes = layer_shapes(schedule.len(), &config.hidden);
        let mut rng = SeededRng::new(seed);
        let mut params = Vec::new();
        for (k, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)));
            let bias = if k + 1 == shapes.len() { 0.5 } else { 0.0 };
            params.extend(std::iter::repeat_n(bias, fan_out));
        }
        Ok(Self {
            input_scaling: vec![(0.0, 1.0); schedule.len()],
            config,
            schedule,
            shapes,
            params,
            normalization,
        })
    }

    pub fn from_params(
        config: FcnnConfig,
        schedule: Schedule,
        normalization: NormalizationSpec,
        input_scaling: Vec<(f64, f64)>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if input_scaling.len() != schedule.len() || input_scaling.iter().any(|s| !(s.1 > 0.0)) {
            return Err(OtomError::Format("invalid FCNN input scaling".into()));
        }
        let shapes = layer_shapes(schedule.len(), &config.hidden);
        let total: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
        if params.len() != total {
            return Err(OtomError::Format(format!(
                "expected {total} FCNN parameters, found {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            schedule,
            shapes,
            params,
            input_scaling,
            normalization,
        })
    }

    pub fn config(&self) -> &FcnnConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn input_scaling(&self) -> &[(f64, f64)] {
        &self.input_scaling
    }

    /// Set per-step signal standardization from training examples.
    pub fn fit_input_scaling(&mut self, examples: &[Example]) -> Result<()> {
        let n = self.input_len();
        if examples.is_empty() {
            return Err(OtomError::domain("no examples for input scaling"));
        }
        if examples.iter().any(|e| e.inputs.len() != n) {
            return Err(OtomError::domain(format!("FCNN bound to {n} steps")));
        }
        let count = examples.len() as f64;
        self.input_scaling = (0..n)
            .map(|t| {
                let mean = examples.iter().map(|e| e.inputs[t][0]).sum::<f64>() / count;
                let var = examples
                    .iter()
                    .map(|e| (e.inputs[t][0] - mean).powi(2))
                    .sum::<f64>()
                    / count;
                (mean, var.sqrt().max(1e-6))
            })
            .collect();
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.schedule.len()
    }

    pub fn tensor_order(&self) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        for (k, &(i, o)) in self.shapes.iter().enumerate() {
            out.push((format!("dense{k}.weight"), [o, i]));
            out.push((format!("dense{k}.bias"), [o, 1]));
        }
        out
    }

    fn signal_matrix(&self, inputs: &[&[[f64; INPUT_CHANNELS]]]) -> Result<Vec<f64>> {
        let n = self.input_len();
        let mut x = Vec::with_capacity(inputs.len() * n);
        for seq in inputs {
            if seq.len() != n {
                return Err(OtomError::domain(format!(
                    "FCNN bound to {n} steps received {}",
                    seq.len()
                )));
            }
            x.extend(
                seq.iter()
                    .zip(&self.input_scaling)
                    .map(|(step, (m, sd))| (step[0] - m) / sd),
            );
        }
        Ok(x)
    }

    /// Pre-activations of every layer, batch-major.
    fn forward_layers(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.shapes.len());
        let mut offset = 0;
        let mut act = x.to_vec();
        for &(fan_in, fan_out) in &self.shapes {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; batch * fan_out];
            for row in z.chunks_exact_mut(fan_out) {
                row.copy_from_slice(b);
            }
            gemm(
                Mat::new(&act, batch, fan_in),
                Mat::t(w, fan_out, fan_in),
                1.0,
                &mut z,
            );
            act = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, inputs: &[&[[f64; INPUT_CHANNELS]]]) -> Result<Vec<[f64; OUTPUTS]>> {
        let x = self.signal_matrix(inputs)?;
        let pre = self.forward_layers(&x, inputs.len());
        let out = pre.last().unwrap();
        Ok(out
            .chunks_exact(OUTPUTS)
            .map(|r| std::array::from_fn(|k| r[k].max(0.0)))
            .collect())
    }

    /// Estimate tissue parameters for fingerprints acquired with the bound
    /// schedule.
    pub fn predict_many(&self, signals: &[&[f64]]) -> Result<Vec<TissueParams>> {
        let channels = self.normalization.schedule_channels(&self.schedule);
        let inputs: Vec<Vec<[f64; INPUT_CHANNELS]>> = signals
            .iter()
            .map(|s| {
                if s.len() != self.input_len() {
                    return Err(OtomError::domain(format!(
                        "FCNN bound to {} steps received {}",
                        self.input_len(),
                        s.len()
                    )));
                }
                Ok(self.normalization.inputs_from_channels(&channels, s))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[[f64; INPUT_CHANNELS]]> = inputs.iter().map(|v| v.as_slice()).collect();
        let outs = self.predict_normalized(&refs)?;
        Ok(outs
            .iter()
            .map(|u| self.normalization.denormalize_target(u))
            .collect())
    }

    pub fn predict(&self, signal: &[f64]) -> Result<TissueParams> {
        Ok(self.predict_many(&[signal])?[0])
    }
}

impl Regressor for Fcnn {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad_sum(&self, batch: &[&Example], grad: &mut [f64]) -> Result<f64> {
        let inputs: Vec<&[[f64; INPUT_CHANNELS]]> =
            batch.iter().map(|e| e.inputs.as_slice()).collect();
        let x = self.signal_matrix(&inputs)?;
        let nb = batch.len();
        if nb == 0 {
            return Ok(0.0);
        }
        let pre = self.forward_layers(&x, nb);

        let mut loss = 0.0;
        let top = pre.last().unwrap();
        let mut delta = vec![0.0; nb * OUTPUTS];
        for (b, ex) in batch.iter().enumerate() {
            let z = &top[b * OUTPUTS..(b + 1) * OUTPUTS];
            let out: [f64; OUTPUTS] = std::array::from_fn(|k| z[k].max(0.0));
            let (l, d) = l1_loss_grad(&out, &ex.target);
            loss += l;
            for k in 0..OUTPUTS {
                delta[b * OUTPUTS + k] = if z[k] > 0.0 { d[k] } else { 0.0 };
            }
        }

        let mut offsets = Vec::with_capacity(self.shapes.len());
        let mut at = 0;
        for &(i, o) in &self.shapes {
            offsets.push(at);
            at += i * o + o;
        }
        for k in (0..self.shapes.len()).rev() {
            let (fan_in, fan_out) = self.shapes[k];
            let act: Vec<f64> = if k == 0 {
                x.clone()
            } else {
                pre[k - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let off = offsets[k];
            let (gw, gb) =
                grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            gemm(
                Mat::t(&delta, nb, fan_out),
                Mat::new(&act, nb, fan_in),
                1.0,
                gw,
            );
            for row in delta.chunks_exact(fan_out) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if k > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut below = vec![0.0; nb * fan_in];
                gemm(
                    Mat::new(&delta, nb, fan_out),
                    Mat::new(w, fan_out, fan_in),
                    0.0,
                    &mut below,
                );
                for (d, z) in below.iter_mut().zip(&pre[k - 1]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = below;
            }
        }
        Ok(loss)
    }

    fn predict_normalized(
        &self,
        inputs: &[&[[f64; INPUT_CHANNELS]]],
    ) -> Result<Vec<[f64; OUTPUTS]>> {
        let parts: Vec<Vec<[f64; OUTPUTS]>> = inputs
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| self.forward(chunk))
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    }
}
