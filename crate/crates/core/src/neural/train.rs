//! Mini-batch training loop with seeded shuffling, per-epoch validation RMSE
//! in megawatts, best-epoch checkpointing and an optional plateau scheduler.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, backward_into, draw_mask, forward_with_mask, predict, sgd_step, AdamState,
    LstmParams, NetDims, NeuralError, PlateauScheduler,
};
use crate::features::{invert_scaler, ScalerParams, SequenceSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Plateau scheduler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

/// Training hyperparameters. Defaults follow the reference protocol:
/// learning rate 0.009, 1700 epochs, Adam, sequence length 24, dropout 0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
    pub sequence_length: usize,
    pub hidden_size: usize,
    pub embed_hour_dim: usize,
    pub embed_dow_dim: usize,
    pub embed_month_dim: usize,
    pub embed_year_dim: usize,
    pub dense_hidden: usize,
    pub dropout_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub scheduler: Option<SchedulerConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.009,
            epochs: 1700,
            optimizer: OptimizerKind::Adam,
            batch_size: 256,
            seed: 42,
            sequence_length: 24,
            hidden_size: 64,
            embed_hour_dim: 8,
            embed_dow_dim: 4,
            embed_month_dim: 8,
            embed_year_dim: 4,
            dense_hidden: 32,
            dropout_rate: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            scheduler: None,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> NetDims {
        NetDims {
            hidden: self.hidden_size,
            embed_hour: self.embed_hour_dim,
            embed_dow: self.embed_dow_dim,
            embed_month: self.embed_month_dim,
            embed_year: self.embed_year_dim,
            dense_hidden: self.dense_hidden,
        }
    }

    fn validate(&self) -> Result<(), NeuralError> {
        if self.learning_rate <= 0.0 {
            return Err(NeuralError::DimensionMismatch("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(NeuralError::DimensionMismatch("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.hidden_size == 0 || self.dense_hidden == 0 {
            return Err(NeuralError::DimensionMismatch("sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NeuralError::DimensionMismatch("dropout must be in [0, 1)".into()));
        }
        if !(12..=36).contains(&self.sequence_length) {
            log::warn!(
                "sequence length {} is outside the validated band 12-36",
                self.sequence_length
            );
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean squared error on scaled demand over the epoch's batches.
    pub train_loss: f64,
    /// Validation RMSE in megawatts (evaluation mode, unscaled).
    pub val_rmse_mw: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    /// CSV with columns `epoch,train_loss,val_rmse_mw,lr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rmse_mw,lr,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_rmse_mw, e.lr, e.seconds
            ));
        }
        out
    }

    /// Same CSV with the wall-time column blanked, for content hashing.
    pub fn to_csv_without_timing(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rmse_mw,lr,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},\n", e.epoch, e.train_loss, e.val_rmse_mw, e.lr));
        }
        out
    }
}

/// Training result: the best-validation parameters (the model to use), the
/// final-epoch parameters, and the full trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    pub final_params: LstmParams,
    pub best_epoch: usize,
    pub best_val_rmse_mw: f64,
    pub trace: TrainTrace,
}

/// SplitMix64 avalanche, used to derive independent per-(epoch, sample)
/// streams from one seed.
fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn year_vocabulary(samples: &[SequenceSample]) -> Vec<i32> {
    let mut years: Vec<i32> = samples.iter().map(|s| s.calendar.year).collect();
    years.sort_unstable();
    years.dedup();
    years
}

/// Per-sample gradient work for one deterministic chunk of a batch.
/// Gradients are pre-scaled by `2 (pred - target) / batch_len`.
fn chunk_gradients(
    params: &LstmParams,
    samples: &[SequenceSample],
    targets: &[f64],
    indices: &[usize],
    batch_len: usize,
    epoch: usize,
    seed: u64,
) -> (LstmParams, f64) {
    let mut grads = params.zeros_like();
    let mut sse = 0.0;
    for &idx in indices {
        let sample = &samples[idx];
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch as u64, idx as u64]));
        let mask = draw_mask(params, true, &mut mask_rng);
        let (pred, cache) =
            forward_with_mask(params, &sample.temperature_window, &sample.calendar, &mask);
        let err = pred - targets[idx];
        sse += err * err;
        let dloss = 2.0 * err / batch_len as f64;
        backward_into(params, &cache, dloss, &mut grads).expect("fresh cache is never stale");
    }
    (grads, sse)
}

/// Samples per parallel work unit. Chunk boundaries are a pure function of
/// the batch indices, and chunk gradients are reduced in index order, so the
/// result is bit-identical no matter how rayon schedules the work.
const GRAD_CHUNK: usize = 32;

/// Trains the network. Validation RMSE is computed in megawatts each epoch
/// and the parameters from the best epoch are returned (the reference
/// protocol selects models on hold-out RMSE). The validation set influences
/// checkpoint selection and the optional scheduler only — never gradients.
pub fn train(
    train_samples: &[SequenceSample],
    val_samples: &[SequenceSample],
    demand_scaler: &ScalerParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    config.validate()?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    let seq_len = config.sequence_length;
    for (i, s) in train_samples.iter().chain(val_samples).enumerate() {
        if s.temperature_window.len() != seq_len {
            return Err(NeuralError::DimensionMismatch(format!(
                "sample {i} window length {} != configured sequence length {seq_len}",
                s.temperature_window.len()
            )));
        }
    }
    let targets: Vec<f64> = train_samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.target_demand_scaled.ok_or(NeuralError::MissingTarget(i)))
        .collect::<Result<_, _>>()?;
    let val_targets_mw: Vec<f64> = val_samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.target_demand_mw.ok_or(NeuralError::MissingTarget(i)))
        .collect::<Result<_, _>>()?;

    let vocab = year_vocabulary(train_samples);
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x1217]));
    let mut params = LstmParams::init(config.dims(), config.dropout_rate, vocab, &mut init_rng);
    let mut adam = AdamState::new(&params);
    adam.beta1 = config.adam_beta1;
    adam.beta2 = config.adam_beta2;
    adam.epsilon = config.adam_epsilon;
    let mut scheduler = config
        .scheduler
        .map(|s| PlateauScheduler::new(config.learning_rate, s.factor, s.patience, s.min_lr));

    let mut lr = config.learning_rate;
    let mut trace = TrainTrace::default();
    let mut best: Option<(usize, f64, LstmParams)> = None;
    let mut indices: Vec<usize> = (0..train_samples.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, epoch as u64, shuffle_tag()]));
        indices.shuffle(&mut shuffle_rng);

        let mut epoch_sse = 0.0;
        for batch in indices.chunks(config.batch_size) {
            let chunk_results: Vec<(LstmParams, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    chunk_gradients(
                        &params,
                        train_samples,
                        &targets,
                        chunk,
                        batch.len(),
                        epoch,
                        config.seed,
                    )
                })
                .collect();
            let mut grads = params.zeros_like();
            for (chunk_grads, chunk_sse) in chunk_results {
                grads.add_assign(&chunk_grads);
                epoch_sse += chunk_sse;
            }
            match config.optimizer {
                OptimizerKind::Adam => adam_step(&mut params, &grads, &mut adam, lr),
                OptimizerKind::Sgd => sgd_step(&mut params, &grads, lr),
            }
        }
        let train_loss = epoch_sse / train_samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(NeuralError::Diverged { epoch });
        }

        // Make the reserved out-of-vocabulary year row reflect the trained
        // rows before evaluating; it receives no gradient, so this never
        // perturbs the optimization trajectory.
        params.refresh_year_fallback_row();
        let val_preds_mw: Vec<f64> = val_samples
            .par_iter()
            .map(|s| invert_scaler(demand_scaler, predict(&params, s).expect("validated sample")))
            .collect();
        let val_rmse_mw = crate::eval::rmse(&val_targets_mw, &val_preds_mw)
            .map_err(|_| NeuralError::EmptyInput)?;

        let epoch_lr = lr;
        if let Some(s) = scheduler.as_mut() {
            lr = s.step(val_rmse_mw);
        }
        trace.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_rmse_mw,
            lr: epoch_lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().map_or(true, |(_, rmse, _)| val_rmse_mw < *rmse) {
            best = Some((epoch, val_rmse_mw, params.clone()));
        }
    }

    let (best_epoch, best_val_rmse_mw, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        final_params: params,
        best_epoch,
        best_val_rmse_mw,
        trace,
    })
}

fn shuffle_tag() -> u64 {
    0x53_48_55_46 // "SHUF"
}
