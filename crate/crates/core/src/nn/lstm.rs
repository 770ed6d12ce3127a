//! LSTM cell and one-direction layer over packed sequences, with
//! backpropagation through time.
//!
//! Gate order within the 4H pre-activation rows is [input, forget, cell,
//! output].

use super::linalg::{gemm, Mat};
use super::packed::PackedLayout;
use crate::error::{OtomError, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed parameters of one LSTM direction.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a> {
    /// 4H × in
    pub w_ih: &'a [f64],
    /// 4H × H
    pub w_hh: &'a [f64],
    /// 4H
    pub bias: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

impl LstmWeights<'_> {
    fn check(&self) -> Result<()> {
        let g = 4 * self.hidden;
        if self.w_ih.len() != g * self.input
            || self.w_hh.len() != g * self.hidden
            || self.bias.len() != g
        {
            return Err(OtomError::domain(
                "LSTM weight shapes disagree with dimensions",
            ));
        }
        Ok(())
    }
}

/// Mutable gradient slices matching [`LstmWeights`].
pub struct LstmGrads<'a> {
    pub w_ih: &'a mut [f64],
    pub w_hh: &'a mut [f64],
    pub bias: &'a mut [f64],
}

/// Apply gate nonlinearities in place and update the cell.
///
/// `z` holds pre-activations on entry and [i, f, g, o] activations on exit.
#[inline]
fn activate(
    z: &mut [f64],
    c_prev: Option<&[f64]>,
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
) {
    let hd = c.len();
    let (zi, rest) = z.split_at_mut(hd);
    let (zf, rest) = rest.split_at_mut(hd);
    let (zg, zo) = rest.split_at_mut(hd);
    for k in 0..hd {
        let i = sigmoid(zi[k]);
        let f = sigmoid(zf[k]);
        let g = zg[k].tanh();
        let o = sigmoid(zo[k]);
        zi[k] = i;
        zf[k] = f;
        zg[k] = g;
        zo[k] = o;
        let cv = i * g + c_prev.map_or(0.0, |cp| f * cp[k]);
        let tc = cv.tanh();
        c[k] = cv;
        tanh_c[k] = tc;
        h[k] = o * tc;
    }
}

/// One LSTM step: returns (h', c').
pub fn lstm_cell_forward(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w: &LstmWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    w.check()?;
    if x.len() != w.input || h.len() != w.hidden || c.len() != w.hidden {
        return Err(OtomError::domain(format!(
            "LSTM cell expects x[{}], h[{}], c[{}]; got x[{}], h[{}], c[{}]",
            w.input,
            w.hidden,
            w.hidden,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let g = 4 * w.hidden;
    let mut z = w.bias.to_vec();
    gemm(
        Mat::new(x, 1, w.input),
        Mat::t(w.w_ih, g, w.input),
        1.0,
        &mut z,
    );
    gemm(
        Mat::new(h, 1, w.hidden),
        Mat::t(w.w_hh, g, w.hidden),
        1.0,
        &mut z,
    );
    let mut c_new = vec![0.0; w.hidden];
    let mut tanh_c = vec![0.0; w.hidden];
    let mut h_new = vec![0.0; w.hidden];
    activate(&mut z, Some(c), &mut c_new, &mut tanh_c, &mut h_new);
    Ok((h_new, c_new))
}

/// Per-row activations kept for the backward pass.
pub struct DirectionCache {
    /// rows × 4H gate activations [i, f, g, o].
    pub gates: Vec<f64>,
    /// rows × H
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    /// rows × H hidden outputs.
    pub h: Vec<f64>,
}

/// Run one direction over packed input `x` (rows × in), zero initial state.
pub fn direction_forward(w: &LstmWeights, layout: &PackedLayout, x: &[f64]) -> DirectionCache {
    let (hd, g) = (w.hidden, 4 * w.hidden);
    let rows = layout.rows();
    let mut gates = vec![0.0; rows * g];
    for row in gates.chunks_exact_mut(g) {
        row.copy_from_slice(w.bias);
    }
    gemm(
        Mat::new(x, rows, w.input),
        Mat::t(w.w_ih, g, w.input),
        1.0,
        &mut gates,
    );

    let mut c = vec![0.0; rows * hd];
    let mut tanh_c = vec![0.0; rows * hd];
    let mut h = vec![0.0; rows * hd];
    for t in 0..layout.steps() {
        let bt = layout.batch_sizes[t];
        let r0 = layout.offsets[t];
        let prev = if t > 0 {
            Some(layout.offsets[t - 1])
        } else {
            None
        };
        if let Some(p0) = prev {
            let (h_done, _) = h.split_at(r0 * hd);
            gemm(
                Mat::new(&h_done[p0 * hd..(p0 + bt) * hd], bt, hd),
                Mat::t(w.w_hh, g, hd),
                1.0,
                &mut gates[r0 * g..(r0 + bt) * g],
            );
        }
        let (c_done, c_rest) = c.split_at_mut(r0 * hd);
        for b in 0..bt {
            let r = r0 + b;
            let c_prev = prev.map(|p0| &c_done[(p0 + b) * hd..(p0 + b + 1) * hd]);
            activate(
                &mut gates[r * g..(r + 1) * g],
                c_prev,
                &mut c_rest[b * hd..(b + 1) * hd],
                &mut tanh_c[r * hd..(r + 1) * hd],
                &mut h[r * hd..(r + 1) * hd],
            );
        }
    }
    DirectionCache {
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Backpropagate `dh` (rows × H, gradient on every hidden output) through one
/// direction. Accumulates into `grads`; returns the input gradient
/// (rows × in) when `want_dx`.
pub fn direction_backward(
    w: &LstmWeights,
    layout: &PackedLayout,
    x: &[f64],
    cache: &DirectionCache,
    dh: &[f64],
    grads: &mut LstmGrads,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (hd, g) = (w.hidden, 4 * w.hidden);
    let rows = layout.rows();
    let steps = layout.steps();
    let mut dz = vec![0.0; rows * g];
    let bmax = layout.batch();
    // Recurrent gradients flowing from step t+1 into step t, by slot.
    let mut dh_rec = vec![0.0; bmax * hd];
    let mut dc_rec = vec![0.0; bmax * hd];

    for t in (0..steps).rev() {
        let bt = layout.batch_sizes[t];
        let r0 = layout.offsets[t];
        let next_bt = if t + 1 < steps {
            layout.batch_sizes[t + 1]
        } else {
            0
        };
        for b in 0..bt {
            let r = r0 + b;
            let gate = &cache.gates[r * g..(r + 1) * g];
            let tc = &cache.tanh_c[r * hd..(r + 1) * hd];
            let c_prev = (t > 0).then(|| {
                let p = layout.offsets[t - 1] + b;
                &cache.c[p * hd..(p + 1) * hd]
            });
            let dzr = &mut dz[r * g..(r + 1) * g];
            let carried = b < next_bt;
            for k in 0..hd {
                let (i, f, gg, o) = (gate[k], gate[hd + k], gate[2 * hd + k], gate[3 * hd + k]);
                let mut dhk = dh[r * hd + k];
                let mut dck = 0.0;
                if carried {
                    dhk += dh_rec[b * hd + k];
                    dck = dc_rec[b * hd + k];
                }
                dck += dhk * o * (1.0 - tc[k] * tc[k]);
                let cp = c_prev.map_or(0.0, |c| c[k]);
                dzr[k] = dck * gg * i * (1.0 - i);
                dzr[hd + k] = dck * cp * f * (1.0 - f);
                dzr[2 * hd + k] = dck * i * (1.0 - gg * gg);
                dzr[3 * hd + k] = dhk * tc[k] * o * (1.0 - o);
                dc_rec[b * hd + k] = dck * f;
            }
        }
        if t > 0 {
            gemm(
                Mat::new(&dz[r0 * g..(r0 + bt) * g], bt, g),
                Mat::new(w.w_hh, g, hd),
                0.0,
                &mut dh_rec[..bt * hd],
            );
            let p0 = layout.offsets[t - 1];
            gemm(
                Mat::t(&dz[r0 * g..(r0 + bt) * g], bt, g),
                Mat::new(&cache.h[p0 * hd..(p0 + bt) * hd], bt, hd),
                1.0,
                grads.w_hh,
            );
        }
    }

    gemm(
        Mat::t(&dz, rows, g),
        Mat::new(x, rows, w.input),
        1.0,
        grads.w_ih,
    );
    for row in dz.chunks_exact(g) {
        for (acc, v) in grads.bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * w.input];
        gemm(
            Mat::new(&dz, rows, g),
            Mat::new(w.w_ih, g, w.input),
            0.0,
            &mut dx,
        );
        dx
    })
}
