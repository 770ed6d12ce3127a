//! Minibatch Adam training with step learning-rate decay, best-validation
//! model selection and early stopping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{l1_loss, Adam, AdamConfig, BiLstm, Fcnn, Regressor};
use crate::dataset::{
    fixed_schedule_samples, is_validation, Dataset, Example, NoiseSpec, NormalizationSpec, Sample,
    TissueRanges,
};
use crate::error::{OtomError, Result};
use crate::physics::PoolConstants;
use crate::rng::{derive_seed, SeededRng};
use crate::schedule::Schedule;

/// Gradients are accumulated over fixed chunks of this many examples and
/// reduced in chunk order, so results do not depend on the worker count.
const GRADIENT_CHUNK: usize = 128;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LossType {
    #[default]
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub seed: u64,
    pub loss_type: LossType,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every_epochs: 5,
            batch_size: 256,
            max_epochs: 20,
            early_stop_patience: 3,
            early_stop_min_delta: 1e-5,
            seed: 0,
            loss_type: LossType::L1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_init > 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_every_epochs > 0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.early_stop_patience > 0
            && self.early_stop_min_delta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OtomError::Config(
                "training settings must be positive".into(),
            ))
        }
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch.max(1) - 1) / self.lr_decay_every_epochs;
        self.lr_init * self.lr_decay_factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Mean L1 loss of `model` over `examples`.
pub fn mean_loss<R: Regressor>(model: &R, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(OtomError::domain("no examples to evaluate"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let inputs: Vec<_> = chunk.iter().map(|e| e.inputs.as_slice()).collect();
        let preds = model.predict_normalized(&inputs)?;
        total += preds
            .iter()
            .zip(chunk)
            .map(|(p, e)| l1_loss(p, &e.target))
            .sum::<f64>();
    }
    Ok(total / examples.len() as f64)
}

fn batch_gradient<R: Regressor>(model: &R, batch: &[&Example], grad: &mut [f64]) -> Result<f64> {
    let n = model.params().len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let loss = model.loss_grad_sum(chunk, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    grad.fill(0.0);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok(loss)
}

/// Train `model` in place. The returned model holds the weights of the
/// epoch with the lowest validation loss (training loss when `val` is
/// empty).
pub fn train<R: Regressor>(
    model: &mut R,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(OtomError::domain("training set is empty"));
    }
    let n = model.params().len();
    let mut opt = Adam::new(n, config.adam);
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let start = std::time::Instant::now();
        let lr = config.lr_at(epoch);
        SeededRng::new(derive_seed(config.seed, 10, epoch as u64)).shuffle(&mut order);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            total += batch_gradient(model, &batch, &mut grad)?;
            opt.step(model.params_mut(), &grad, lr);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(model, val)?)
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(OtomError::Numeric(format!(
                "loss diverged at epoch {epoch}"
            )));
        }
        log::info!(
            "epoch {epoch}: lr {lr:.1e} train {train_loss:.6} val {} ({:.1}s)",
            val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            start.elapsed().as_secs_f64()
        );
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });

        let score = val_loss.unwrap_or(train_loss);
        match &best {
            Some((b, _)) if score >= b - config.early_stop_min_delta => {
                stale += 1;
                if score < *b {
                    best = Some((score, model.params().to_vec()));
                    history.best_epoch = Some(epoch);
                }
            }
            _ => {
                stale = 0;
                best = Some((score, model.params().to_vec()));
                history.best_epoch = Some(epoch);
            }
        }
        if stale >= config.early_stop_patience && epoch < config.max_epochs {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok(history)
}

/// Normalized examples split into (train, validation) by record index.
pub fn split_examples(
    samples: &[Sample],
    norm: &NormalizationSpec,
) -> (Vec<Example>, Vec<Example>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let ex = norm.example(s);
        if is_validation(i as u64) {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    (train, val)
}

/// Train a bi-LSTM on a dataset file loaded in memory.
pub fn train_on_dataset(
    model: &mut BiLstm,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    let (tr, va) = split_examples(&dataset.samples, &model.normalization);
    train(model, &tr, &va, config)
}

/// Fine-tuning on one fixed schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TransferConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub tissue_ranges: TissueRanges,
    pub noise: NoiseSpec,
    pub constants: PoolConstants,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            seed: 1,
            train: TrainConfig {
                lr_init: 1e-4,
                lr_decay_every_epochs: 2,
                max_epochs: 3,
                ..TrainConfig::default()
            },
            tissue_ranges: TissueRanges::default(),
            noise: NoiseSpec::default(),
            constants: PoolConstants::default(),
        }
    }
}

/// Fine-tune every weight of `model` on fresh samples acquired with
/// `schedule` only. With zero samples the model is left untouched.
pub fn transfer_train(
    model: &mut BiLstm,
    schedule: &Schedule,
    config: &TransferConfig,
) -> Result<TrainHistory> {
    if config.n_samples == 0 {
        return Ok(TrainHistory::default());
    }
    let samples = fixed_schedule_samples(
        schedule,
        config.n_samples,
        config.seed,
        &config.tissue_ranges,
        &config.noise,
        &config.constants,
    )?;
    let (tr, va) = split_examples(&samples, &model.normalization);
    train(model, &tr, &va, &config.train)
}

/// Train a schedule-bound FCNN; every sample must use the bound schedule.
pub fn fcnn_train(
    model: &mut Fcnn,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if let Some(i) = samples
        .iter()
        .position(|s| s.schedule.points != model.schedule().points)
    {
        return Err(OtomError::domain(format!(
            "sample {i} was not acquired with the FCNN's schedule `{}`",
            model.schedule().label()
        )));
    }
    let (tr, va) = split_examples(samples, &model.normalization);
    if !tr.is_empty() {
        model.fit_input_scaling(&tr)?;
    }
    train(model, &tr, &va, config)
}
