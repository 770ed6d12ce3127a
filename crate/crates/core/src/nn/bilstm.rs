//! Stacked bidirectional LSTM regressor with a dense + ReLU head.
//!
//! Each layer runs a forward pass over steps 1..N and a backward pass over
//! N..1. Layer l+1 sees the concatenated [forward, backward] hidden states
//! of layer l at each step. The head reads the final forward state h⃗_N and
//! the final backward state h⃖_1 of the top layer.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Mat};
use super::lstm::{direction_backward, direction_forward, DirectionCache, LstmGrads, LstmWeights};
use super::packed::PackedLayout;
use super::{l1_loss_grad, Regressor, OUTPUTS};
use crate::dataset::{Example, NormalizationSpec, INPUT_CHANNELS};
use crate::error::{OtomError, Result};
use crate::physics::TissueParams;
use crate::rng::SeededRng;
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BiLstmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
}

impl Default for BiLstmConfig {
    /// Desk-scale defaults. The full-size network is 3 layers × 512.
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            input_dim: INPUT_CHANNELS,
        }
    }
}

#[derive(Debug, Clone)]
struct DirSlots {
    w_ih: Range<usize>,
    w_hh: Range<usize>,
    bias: Range<usize>,
    input: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    dirs: Vec<[DirSlots; 2]>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &BiLstmConfig) -> Self {
        let h = cfg.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let mut dirs = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_dim } else { 2 * h };
            let mut slot = || DirSlots {
                w_ih: take(4 * h * input),
                w_hh: take(4 * h * h),
                bias: take(4 * h),
                input,
            };
            let fwd = slot();
            let bwd = slot();
            dirs.push([fwd, bwd]);
        }
        let head_w = take(OUTPUTS * 2 * h);
        let head_b = take(OUTPUTS);
        Self {
            dirs,
            head_w,
            head_b,
            total: at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    config: BiLstmConfig,
    layout: Layout,
    params: Vec<f64>,
    pub normalization: NormalizationSpec,
}

struct LayerCache {
    x_fwd: Vec<f64>,
    x_rev: Vec<f64>,
    dirs: [DirectionCache; 2],
}

struct ForwardCache {
    packed: PackedLayout,
    layers: Vec<LayerCache>,
    /// batch × 2H head input, packed slot order.
    features: Vec<f64>,
    /// batch × 4 head pre-activations, packed slot order.
    pre: Vec<f64>,
}

impl BiLstm {
    /// Fresh model: LSTM weights and biases uniform in ±1/√H, forget-gate
    /// bias 1.0; head weights uniform in ±1/√H, head bias 0.5 (centre of the
    /// normalized target range, so the ReLU starts active).
    pub fn new(config: BiLstmConfig, normalization: NormalizationSpec, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.input_dim == 0 {
            return Err(OtomError::domain(
                "bi-LSTM needs ≥1 layer, hidden and input units",
            ));
        }
        let layout = Layout::new(&config);
        let mut rng = SeededRng::new(seed);
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let mut params: Vec<f64> = (0..layout.total)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let h = config.hidden;
        for layer in &layout.dirs {
            for d in layer {
                params[d.bias.start + h..d.bias.start + 2 * h].fill(1.0);
            }
        }
        params[layout.head_b.clone()].fill(0.5);
        Ok(Self {
            config,
            layout,
            params,
            normalization,
        })
    }

    /// Rebuild from a flat parameter vector in [`BiLstm::tensor_order`] order.
    pub fn from_params(
        config: BiLstmConfig,
        normalization: NormalizationSpec,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(OtomError::Format(format!(
                "expected {} parameters for {config:?}, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            normalization,
        })
    }

    pub fn config(&self) -> &BiLstmConfig {
        &self.config
    }

    /// Tensor names and shapes in storage order.
    pub fn tensor_order(&self) -> Vec<(String, [usize; 2])> {
        let h = self.config.hidden;
        let mut out = Vec::new();
        for (l, layer) in self.layout.dirs.iter().enumerate() {
            for (d, name) in layer.iter().zip(["fwd", "bwd"]) {
                out.push((format!("lstm{l}.{name}.w_ih"), [4 * h, d.input]));
                out.push((format!("lstm{l}.{name}.w_hh"), [4 * h, h]));
                out.push((format!("lstm{l}.{name}.bias"), [4 * h, 1]));
            }
        }
        out.push(("head.weight".into(), [OUTPUTS, 2 * h]));
        out.push(("head.bias".into(), [OUTPUTS, 1]));
        out
    }

    fn weights(&self, layer: usize, dir: usize) -> LstmWeights<'_> {
        let s = &self.layout.dirs[layer][dir];
        LstmWeights {
            w_ih: &self.params[s.w_ih.clone()],
            w_hh: &self.params[s.w_hh.clone()],
            bias: &self.params[s.bias.clone()],
            input: s.input,
            hidden: self.config.hidden,
        }
    }

    fn check_inputs(&self, seqs: &[&[[f64; INPUT_CHANNELS]]]) -> Result<()> {
        if self.config.input_dim != INPUT_CHANNELS {
            return Err(OtomError::domain(
                "model input width differs from the 5 input channels",
            ));
        }
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(OtomError::domain("empty input sequence"));
        }
        Ok(())
    }

    fn forward_cached(&self, seqs: &[&[[f64; INPUT_CHANNELS]]]) -> ForwardCache {
        let h = self.config.hidden;
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let packed = PackedLayout::new(&lengths);
        let rows = packed.rows();
        let mut x_fwd = packed.pack(seqs);
        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let in_dim = self.layout.dirs[l][0].input;
            let x_rev = packed.reversed(&x_fwd, in_dim);
            let fwd = direction_forward(&self.weights(l, 0), &packed, &x_fwd);
            let bwd = direction_forward(&self.weights(l, 1), &packed, &x_rev);
            let mut next = vec![0.0; rows * 2 * h];
            for r in 0..rows {
                let q = packed.reverse[r];
                next[r * 2 * h..r * 2 * h + h].copy_from_slice(&fwd.h[r * h..(r + 1) * h]);
                next[r * 2 * h + h..(r + 1) * 2 * h].copy_from_slice(&bwd.h[q * h..(q + 1) * h]);
            }
            layers.push(LayerCache {
                x_fwd: std::mem::replace(&mut x_fwd, next),
                x_rev,
                dirs: [fwd, bwd],
            });
        }
        let top = layers.last().unwrap();
        let batch = packed.batch();
        let mut features = vec![0.0; batch * 2 * h];
        for b in 0..batch {
            let r = packed.last_row(b);
            features[b * 2 * h..b * 2 * h + h].copy_from_slice(&top.dirs[0].h[r * h..(r + 1) * h]);
            features[b * 2 * h + h..(b + 1) * 2 * h]
                .copy_from_slice(&top.dirs[1].h[r * h..(r + 1) * h]);
        }
        let mut pre = vec![0.0; batch * OUTPUTS];
        for row in pre.chunks_exact_mut(OUTPUTS) {
            row.copy_from_slice(&self.params[self.layout.head_b.clone()]);
        }
        gemm(
            Mat::new(&features, batch, 2 * h),
            Mat::t(&self.params[self.layout.head_w.clone()], OUTPUTS, 2 * h),
            1.0,
            &mut pre,
        );
        ForwardCache {
            packed,
            layers,
            features,
            pre,
        }
    }

    /// Normalized-unit outputs (after ReLU) in caller order.
    pub fn forward(&self, seqs: &[&[[f64; INPUT_CHANNELS]]]) -> Result<Vec<[f64; OUTPUTS]>> {
        self.check_inputs(seqs)?;
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.forward_cached(seqs);
        let mut out = vec![[0.0; OUTPUTS]; seqs.len()];
        for (slot, &src) in cache.packed.order.iter().enumerate() {
            for k in 0..OUTPUTS {
                out[src][k] = cache.pre[slot * OUTPUTS + k].max(0.0);
            }
        }
        Ok(out)
    }

    /// Sum over the batch of per-example L1 losses; adds the gradient of that
    /// sum to `grad`.
    fn backward_sum(&self, batch: &[&Example], grad: &mut [f64]) -> Result<f64> {
        let seqs: Vec<&[[f64; INPUT_CHANNELS]]> =
            batch.iter().map(|e| e.inputs.as_slice()).collect();
        self.check_inputs(&seqs)?;
        if batch.is_empty() {
            return Ok(0.0);
        }
        let h = self.config.hidden;
        let cache = self.forward_cached(&seqs);
        let packed = &cache.packed;
        let nb = packed.batch();

        let mut loss = 0.0;
        let mut d_pre = vec![0.0; nb * OUTPUTS];
        for (slot, &src) in packed.order.iter().enumerate() {
            let pre = &cache.pre[slot * OUTPUTS..(slot + 1) * OUTPUTS];
            let out: [f64; OUTPUTS] = std::array::from_fn(|k| pre[k].max(0.0));
            let (l, d_out) = l1_loss_grad(&out, &batch[src].target);
            loss += l;
            for k in 0..OUTPUTS {
                d_pre[slot * OUTPUTS + k] = if pre[k] > 0.0 { d_out[k] } else { 0.0 };
            }
        }

        let (lstm_grad, head_grad) = grad.split_at_mut(self.layout.head_w.start);
        let (g_head_w, g_head_b) = head_grad.split_at_mut(OUTPUTS * 2 * h);
        gemm(
            Mat::t(&d_pre, nb, OUTPUTS),
            Mat::new(&cache.features, nb, 2 * h),
            1.0,
            g_head_w,
        );
        for row in d_pre.chunks_exact(OUTPUTS) {
            for (acc, v) in g_head_b.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut d_features = vec![0.0; nb * 2 * h];
        gemm(
            Mat::new(&d_pre, nb, OUTPUTS),
            Mat::new(&self.params[self.layout.head_w.clone()], OUTPUTS, 2 * h),
            0.0,
            &mut d_features,
        );

        let rows = packed.rows();
        let mut dh = [vec![0.0; rows * h], vec![0.0; rows * h]];
        for b in 0..nb {
            let r = packed.last_row(b);
            dh[0][r * h..(r + 1) * h].copy_from_slice(&d_features[b * 2 * h..b * 2 * h + h]);
            dh[1][r * h..(r + 1) * h].copy_from_slice(&d_features[b * 2 * h + h..(b + 1) * 2 * h]);
        }

        for l in (0..self.config.layers).rev() {
            let lc = &cache.layers[l];
            let want_dx = l > 0;
            let mut dx = [None, None];
            for d in 0..2 {
                let s = &self.layout.dirs[l][d];
                let (gi, rest) = lstm_grad[s.w_ih.start..s.bias.end].split_at_mut(s.w_ih.len());
                let (gh, gb) = rest.split_at_mut(s.w_hh.len());
                let x = if d == 0 { &lc.x_fwd } else { &lc.x_rev };
                dx[d] = direction_backward(
                    &self.weights(l, d),
                    packed,
                    x,
                    &lc.dirs[d],
                    &dh[d],
                    &mut LstmGrads {
                        w_ih: gi,
                        w_hh: gh,
                        bias: gb,
                    },
                    want_dx,
                );
            }
            if let [Some(dx_f), Some(dx_r)] = dx {
                // Input of layer l is [h_fwd(t), h_bwd(t)] of layer l−1 in
                // forward order; the backward direction saw it reversed.
                let w = 2 * h;
                let mut next = [vec![0.0; rows * h], vec![0.0; rows * h]];
                for r in 0..rows {
                    let q = packed.reverse[r];
                    for k in 0..w {
                        let v = dx_f[r * w + k] + dx_r[q * w + k];
                        if k < h {
                            next[0][r * h + k] = v;
                        } else {
                            next[1][q * h + k - h] = v;
                        }
                    }
                }
                dh = next;
            }
        }
        Ok(loss)
    }

    /// Estimate tissue parameters for one fingerprint.
    pub fn predict(&self, signal: &[f64], schedule: &Schedule) -> Result<TissueParams> {
        Ok(self.predict_fixed_schedule(schedule, &[signal])?[0])
    }

    /// Estimate tissue parameters for many fingerprints acquired with one
    /// schedule. Order is preserved; results do not depend on how the
    /// inputs are batched internally.
    pub fn predict_fixed_schedule(
        &self,
        schedule: &Schedule,
        signals: &[&[f64]],
    ) -> Result<Vec<TissueParams>> {
        if let Some(bad) = signals.iter().find(|s| s.len() != schedule.len()) {
            return Err(OtomError::domain(format!(
                "fingerprint length {} differs from schedule length {}",
                bad.len(),
                schedule.len()
            )));
        }
        let channels = self.normalization.schedule_channels(schedule);
        let inputs: Vec<Vec<[f64; INPUT_CHANNELS]>> = signals
            .iter()
            .map(|s| self.normalization.inputs_from_channels(&channels, s))
            .collect();
        let outs =
            self.predict_normalized(&inputs.iter().map(|v| v.as_slice()).collect::<Vec<_>>())?;
        Ok(outs
            .iter()
            .map(|u| self.normalization.denormalize_target(u))
            .collect())
    }
}

/// Inference batch size.
pub(super) const PREDICT_CHUNK: usize = 256;

impl Regressor for BiLstm {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad_sum(&self, batch: &[&Example], grad: &mut [f64]) -> Result<f64> {
        self.backward_sum(batch, grad)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;

    /// Independent scalar implementation of the whole network for one
    /// sequence: explicit loops, no packing, no GEMM.
    fn reference_forward(model: &BiLstm, xs: &[[f64; 5]]) -> [f64; 4] {
        let h = model.config.hidden;
        let p = &model.params;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let run = |s: &DirSlots, seq: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            let mut out = Vec::new();
            for x in seq {
                let mut hn = vec![0.0; h];
                let mut cn = vec![0.0; h];
                for k in 0..h {
                    let pre = |gate: usize| {
                        let row = gate * h + k;
                        let mut z = p[s.bias.start + row];
                        for j in 0..s.input {
                            z += p[s.w_ih.start + row * s.input + j] * x[j];
                        }
                        for j in 0..h {
                            z += p[s.w_hh.start + row * h + j] * hs[j];
                        }
                        z
                    };
                    let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
                    cn[k] = f * cs[k] + i * g;
                    hn[k] = o * cn[k].tanh();
                }
                hs = hn;
                cs = cn;
                out.push(hs.clone());
            }
            out
        };
        let mut seq: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        let n = seq.len();
        let (mut last_f, mut first_b) = (Vec::new(), Vec::new());
        for layer in &model.layout.dirs {
            let f = run(&layer[0], &seq);
            let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
            let mut b = run(&layer[1], &rev);
            b.reverse();
            last_f = f[n - 1].clone();
            first_b = b[0].clone();
            seq = (0..n)
                .map(|t| [f[t].clone(), b[t].clone()].concat())
                .collect();
        }
        let feat = [last_f, first_b].concat();
        std::array::from_fn(|o| {
            let mut z = p[model.layout.head_b.start + o];
            for j in 0..2 * h {
                z += p[model.layout.head_w.start + o * 2 * h + j] * feat[j];
            }
            z.max(0.0)
        })
    }

    fn random_seq(rng: &mut SeededRng, n: usize) -> Vec<[f64; 5]> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.unit()))
            .collect()
    }

    fn model(layers: usize, hidden: usize, seed: u64) -> BiLstm {
        let cfg = BiLstmConfig {
            layers,
            hidden,
            input_dim: 5,
        };
        BiLstm::new(cfg, NormalizationSpec::default(), seed).unwrap()
    }

    #[test]
    fn initialization_contract() {
        let m = model(2, 8, 1);
        let bound = 1.0 / 8f64.sqrt();
        for layer in &m.layout.dirs {
            for d in layer {
                let b = &m.params[d.bias.clone()];
                assert!(b[8..16].iter().all(|&v| v == 1.0));
                assert!(m.params[d.w_ih.clone()].iter().all(|v| v.abs() <= bound));
                assert!(m.params[d.w_hh.clone()].iter().all(|v| v.abs() <= bound));
            }
        }
        let shapes = m.tensor_order();
        assert_eq!(shapes[0].1, [32, 5]);
        assert_eq!(shapes[1].1, [32, 8]);
        assert_eq!(shapes[6].1, [32, 16]);
        let total: usize = shapes.iter().map(|(_, s)| s[0] * s[1]).sum();
        assert_eq!(total, m.params.len());
    }

    #[test]
    fn outputs_are_four_nonnegative() {
        let m = model(2, 6, 3);
        let mut rng = SeededRng::new(4);
        for n in [1, 2, 9] {
            let xs = random_seq(&mut rng, n);
            let out = m.forward(&[&xs]).unwrap();
            assert_eq!(out.len(), 1);
            assert!(out[0].iter().all(|&v| v >= 0.0));
        }
        assert!(m.forward(&[&[]]).is_err());
    }

    #[test]
    fn matches_scalar_reference() {
        for (layers, seed) in [(1, 5), (2, 6), (3, 7)] {
            let m = model(layers, 6, seed);
            let mut rng = SeededRng::new(seed + 100);
            let xs = random_seq(&mut rng, 7);
            let got = m.forward(&[&xs]).unwrap()[0];
            let want = reference_forward(&m, &xs);
            for k in 0..4 {
                assert!((got[k] - want[k]).abs() < 1e-10, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn batched_forward_matches_single() {
        let m = model(2, 5, 9);
        let mut rng = SeededRng::new(10);
        let seqs: Vec<Vec<[f64; 5]>> = [4, 1, 7, 7, 2]
            .iter()
            .map(|&n| random_seq(&mut rng, n))
            .collect();
        let refs: Vec<&[[f64; 5]]> = seqs.iter().map(|s| s.as_slice()).collect();
        let batch = m.forward(&refs).unwrap();
        for (s, b) in refs.iter().zip(&batch) {
            let single = m.forward(&[s]).unwrap()[0];
            for k in 0..4 {
                assert!((single[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // One layer, H = 8, N = 5.
        let mut m = model(1, 8, 11);
        let mut rng = SeededRng::new(12);
        let ex = Example {
            inputs: random_seq(&mut rng, 5),
            target: [0.1, 0.9, 0.2, 0.8],
        };
        let report = gradient_check(&mut m, &[&ex], 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn stacked_variable_length_gradients() {
        let mut m = model(2, 4, 13);
        let mut rng = SeededRng::new(14);
        let exs: Vec<Example> = [3, 5, 1]
            .iter()
            .map(|&n| Example {
                inputs: random_seq(&mut rng, n),
                target: [0.05, 0.95, 0.1, 0.9],
            })
            .collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let report = gradient_check(&mut m, &refs, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let m = model(1, 4, 15);
        let mut rng = SeededRng::new(16);
        let xs = random_seq(&mut rng, 3);
        let out = m.forward(&[&xs]).unwrap()[0];
        let ex = Example {
            inputs: xs,
            target: out,
        };
        let mut g = vec![0.0; m.params.len()];
        let loss = m.loss_grad_sum(&[&ex], &mut g).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_are_deterministic() {
        let m = model(2, 4, 17);
        let mut rng = SeededRng::new(18);
        let ex = Example {
            inputs: random_seq(&mut rng, 6),
            target: [0.3; 4],
        };
        let mut a = vec![0.0; m.params.len()];
        let mut b = vec![0.0; m.params.len()];
        m.loss_grad_sum(&[&ex], &mut a).unwrap();
        m.loss_grad_sum(&[&ex], &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_checks_lengths_and_preserves_order() {
        let m = model(1, 4, 19);
        let s = crate::schedule::fixtures::pseudo_random(10).unwrap();
        assert!(m.predict(&[0.5; 9], &s).is_err());
        let sigs: Vec<Vec<f64>> = (0..300).map(|i| vec![0.3 + i as f64 * 1e-3; 10]).collect();
        let refs: Vec<&[f64]> = sigs.iter().map(|v| v.as_slice()).collect();
        let all = m.predict_fixed_schedule(&s, &refs).unwrap();
        assert_eq!(all.len(), 300);
        for i in [0, 150, 299] {
            assert_eq!(all[i], m.predict(refs[i], &s).unwrap());
        }
    }
}
