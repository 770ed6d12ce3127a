//! Neural estimators: the schedule-agnostic bi-LSTM and the
//! schedule-bound fully connected baseline, plus training and weight I/O.

pub mod adam;
pub mod bilstm;
pub mod fcnn;
pub mod io;
mod linalg;
mod loss;
pub mod lstm;
mod packed;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use bilstm::{BiLstm, BiLstmConfig};
pub use fcnn::{Fcnn, FcnnConfig};
pub use io::{history_path, load_model, save_history, save_model, Model, ModelKind};
pub use loss::{l1_loss, l1_loss_grad};
pub use train::{
    fcnn_train, mean_loss, split_examples, train, train_on_dataset, transfer_train, EpochRecord,
    TrainConfig, TrainHistory, TransferConfig,
};

use crate::dataset::{Example, INPUT_CHANNELS};
use crate::error::Result;

/// Regression targets per example: kmw, m0m, t2m, t1w.
pub const OUTPUTS: usize = 4;

/// A differentiable model over a flat parameter vector.
pub trait Regressor: Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Summed per-example L1 loss over `batch`; the gradient of that sum is
    /// added into `grad`.
    fn loss_grad_sum(&self, batch: &[&Example], grad: &mut [f64]) -> Result<f64>;

    /// Outputs in normalized target units, in input order.
    fn predict_normalized(
        &self,
        inputs: &[&[[f64; INPUT_CHANNELS]]],
    ) -> Result<Vec<[f64; OUTPUTS]>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Magnitude below which gradient entries are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compare `loss_grad_sum` against central differences of the loss for
/// every parameter. Relative error is |a − n| / max(|a|, |n|, floor).
pub fn gradient_check<R: Regressor>(
    model: &mut R,
    batch: &[&Example],
    eps: f64,
) -> Result<GradientReport> {
    let n = model.params().len();
    let mut analytic = vec![0.0; n];
    model.loss_grad_sum(batch, &mut analytic)?;
    let mut scratch = vec![0.0; n];
    let mut report = GradientReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..n {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + eps;
        let up = model.loss_grad_sum(batch, &mut scratch)?;
        model.params_mut()[i] = orig - eps;
        let down = model.loss_grad_sum(batch, &mut scratch)?;
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        if rel > report.max_rel_error {
            report = GradientReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
