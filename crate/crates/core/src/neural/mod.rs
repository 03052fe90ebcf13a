//! From-scratch LSTM regressor with categorical embeddings.
//!
//! Architecture: the scaled temperature window drives a single LSTM layer
//! (input size 1, hidden size H) from zero initial state; the final hidden
//! state is concatenated with the four embedding vectors of the target hour's
//! calendar features; inverted dropout is applied to that concatenation in
//! training mode; two dense layers (ReLU between) produce one scalar.
//!
//! All arithmetic is f64. Recurrent and dense weight matrices are stored
//! column-major (input-index major) so the forward mat-vec runs as a series
//! of axpy passes over contiguous columns.

mod gradcheck;
mod optim;
mod train;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{adam_step, sgd_step, AdamState, PlateauScheduler};
pub use train::{
    train, EpochStats, OptimizerKind, SchedulerConfig, TrainConfig, TrainOutcome, TrainTrace,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{CalendarFeatures, SequenceSample};

/// Gate order used throughout: input, forget, cell candidate, output.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("stale cache: parameters have revision {params} but cache was built at {cache}")]
    StaleCache { params: u64, cache: u64 },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("sample at index {0} has no target demand")]
    MissingTarget(usize),
    #[error("artifact parse error: {0}")]
    Artifact(String),
}

/// Network dimensions, fixed at initialization time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub hidden: usize,
    pub embed_hour: usize,
    pub embed_dow: usize,
    pub embed_month: usize,
    pub embed_year: usize,
    pub dense_hidden: usize,
}

impl NetDims {
    /// Length of the LSTM-output/embedding concatenation feeding the head.
    pub fn concat_len(&self) -> usize {
        self.hidden + self.embed_hour + self.embed_dow + self.embed_month + self.embed_year
    }
}

/// All trainable parameters plus the year vocabulary they were built for.
///
/// The year embedding table has one reserved final row serving years outside
/// the training vocabulary; it receives no gradient and is overwritten with
/// the mean of the trained rows whenever the model is evaluated or exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub dims: NetDims,
    pub dropout_rate: f64,
    /// Ascending training years; row `year_vocab.len()` is the reserved slot.
    pub year_vocab: Vec<i32>,
    pub embed_hour: Vec<f64>,
    pub embed_dow: Vec<f64>,
    pub embed_month: Vec<f64>,
    pub embed_year: Vec<f64>,
    /// Input-to-gate weights, one H-vector per gate (scalar input).
    pub w_x: [Vec<f64>; 4],
    /// Recurrent weights, H*H per gate, column-major: `w_h[j*H + i]` maps
    /// `h_prev[j]` to gate unit `i`.
    pub w_h: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
    /// Dense head, column-major M*D; `dense1_w[j*M + i]` maps concat unit j.
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    pub dense2_w: Vec<f64>,
    pub dense2_b: Vec<f64>,
    #[serde(skip)]
    revision: u64,
}

impl LstmParams {
    /// Seeded initialization: gate weights uniform in +-1/sqrt(H), embeddings
    /// uniform +-0.05, biases zero except the forget-gate bias at 1.0.
    pub fn init(
        dims: NetDims,
        dropout_rate: f64,
        year_vocab: Vec<i32>,
        rng: &mut impl Rng,
    ) -> Self {
        let h = dims.hidden;
        let gate_bound = 1.0 / (h as f64).sqrt();
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let embed_hour = uniform(24 * dims.embed_hour, 0.05);
        let embed_dow = uniform(7 * dims.embed_dow, 0.05);
        let embed_month = uniform(12 * dims.embed_month, 0.05);
        let embed_year = uniform((year_vocab.len() + 1) * dims.embed_year, 0.05);
        let w_x = std::array::from_fn(|_| uniform(h, gate_bound));
        let w_h = std::array::from_fn(|_| uniform(h * h, gate_bound));
        let d = dims.concat_len();
        let m = dims.dense_hidden;
        let dense_bound = 1.0 / (d as f64).sqrt();
        let dense1_w = uniform(m * d, dense_bound);
        let dense1_b = vec![0.0; m];
        let dense2_w = uniform(m, 1.0 / (m as f64).sqrt());
        let dense2_b = vec![0.0];
        let b = std::array::from_fn(|g| if g == 1 { vec![1.0; h] } else { vec![0.0; h] });
        Self {
            dims,
            dropout_rate,
            year_vocab,
            embed_hour,
            embed_dow,
            embed_month,
            embed_year,
            w_x,
            w_h,
            b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
            revision: 0,
        }
    }

    /// Same shapes, all zeros; the container used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, tensor) in z.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v = 0.0);
        }
        z.revision = 0;
        z
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn bump_revision(&mut self) {
        self.revision += 1;
    }

    /// Named views over every parameter tensor, in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embed_hour", self.embed_hour.as_slice()),
            ("embed_dow", self.embed_dow.as_slice()),
            ("embed_month", self.embed_month.as_slice()),
            ("embed_year", self.embed_year.as_slice()),
            ("w_x_input", self.w_x[0].as_slice()),
            ("w_x_forget", self.w_x[1].as_slice()),
            ("w_x_cell", self.w_x[2].as_slice()),
            ("w_x_output", self.w_x[3].as_slice()),
            ("w_h_input", self.w_h[0].as_slice()),
            ("w_h_forget", self.w_h[1].as_slice()),
            ("w_h_cell", self.w_h[2].as_slice()),
            ("w_h_output", self.w_h[3].as_slice()),
            ("b_input", self.b[0].as_slice()),
            ("b_forget", self.b[1].as_slice()),
            ("b_cell", self.b[2].as_slice()),
            ("b_output", self.b[3].as_slice()),
            ("dense1_w", self.dense1_w.as_slice()),
            ("dense1_b", self.dense1_b.as_slice()),
            ("dense2_w", self.dense2_w.as_slice()),
            ("dense2_b", self.dense2_b.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let Self {
            embed_hour,
            embed_dow,
            embed_month,
            embed_year,
            w_x,
            w_h,
            b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
            ..
        } = self;
        let [wx0, wx1, wx2, wx3] = w_x;
        let [wh0, wh1, wh2, wh3] = w_h;
        let [b0, b1, b2, b3] = b;
        vec![
            ("embed_hour", embed_hour.as_mut_slice()),
            ("embed_dow", embed_dow.as_mut_slice()),
            ("embed_month", embed_month.as_mut_slice()),
            ("embed_year", embed_year.as_mut_slice()),
            ("w_x_input", wx0.as_mut_slice()),
            ("w_x_forget", wx1.as_mut_slice()),
            ("w_x_cell", wx2.as_mut_slice()),
            ("w_x_output", wx3.as_mut_slice()),
            ("w_h_input", wh0.as_mut_slice()),
            ("w_h_forget", wh1.as_mut_slice()),
            ("w_h_cell", wh2.as_mut_slice()),
            ("w_h_output", wh3.as_mut_slice()),
            ("b_input", b0.as_mut_slice()),
            ("b_forget", b1.as_mut_slice()),
            ("b_cell", b2.as_mut_slice()),
            ("b_output", b3.as_mut_slice()),
            ("dense1_w", dense1_w.as_mut_slice()),
            ("dense1_b", dense1_b.as_mut_slice()),
            ("dense2_w", dense2_w.as_mut_slice()),
            ("dense2_b", dense2_b.as_mut_slice()),
        ]
    }

    /// `self += other`, tensor-wise.
    pub fn add_assign(&mut self, other: &LstmParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Embedding row index for a calendar year; out-of-vocabulary years map
    /// to the reserved final row.
    pub fn year_row(&self, year: i32) -> usize {
        self.year_vocab.binary_search(&year).unwrap_or(self.year_vocab.len())
    }

    /// Writes the mean of the trained year rows into the reserved slot so
    /// out-of-vocabulary years see an averaged year effect.
    pub fn refresh_year_fallback_row(&mut self) {
        let d = self.dims.embed_year;
        let rows = self.year_vocab.len();
        if rows == 0 || d == 0 {
            return;
        }
        for j in 0..d {
            let mean = (0..rows).map(|r| self.embed_year[r * d + j]).sum::<f64>() / rows as f64;
            self.embed_year[rows * d + j] = mean;
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_window(&self, window: &[f64]) -> Result<(), NeuralError> {
        if window.is_empty() {
            return Err(NeuralError::DimensionMismatch("empty temperature window".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four accumulators so the reduction vectorizes.
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    seq_len: usize,
    inputs: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_c: Vec<f64>,
    gate_o: Vec<f64>,
    c_state: Vec<f64>,
    tanh_c: Vec<f64>,
    concat: Vec<f64>,
    mask: Vec<f64>,
    dense1_pre: Vec<f64>,
    dense1_act: Vec<f64>,
    hour: usize,
    dow: usize,
    month: usize,
    year_row: usize,
    revision: u64,
}

impl ForwardCache {
    /// Cell state at timestep `t` (test instrumentation).
    pub fn cell_state(&self, t: usize) -> &[f64] {
        let h = self.c_state.len() / self.seq_len;
        &self.c_state[t * h..(t + 1) * h]
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
}

/// Forward pass with an explicit dropout mask (entries are 0 or the inverted
/// keep scale). Shared by training, evaluation and the gradient checker.
pub(crate) fn forward_with_mask(
    params: &LstmParams,
    window: &[f64],
    cal: &CalendarFeatures,
    mask: &[f64],
) -> (f64, ForwardCache) {
    let h_dim = params.dims.hidden;
    let seq_len = window.len();
    let d = params.dims.concat_len();
    debug_assert_eq!(mask.len(), d);

    let mut cache = ForwardCache {
        seq_len,
        inputs: window.to_vec(),
        h_prev: vec![0.0; seq_len * h_dim],
        c_prev: vec![0.0; seq_len * h_dim],
        gate_i: vec![0.0; seq_len * h_dim],
        gate_f: vec![0.0; seq_len * h_dim],
        gate_c: vec![0.0; seq_len * h_dim],
        gate_o: vec![0.0; seq_len * h_dim],
        c_state: vec![0.0; seq_len * h_dim],
        tanh_c: vec![0.0; seq_len * h_dim],
        concat: vec![0.0; d],
        mask: mask.to_vec(),
        dense1_pre: vec![0.0; params.dims.dense_hidden],
        dense1_act: vec![0.0; params.dims.dense_hidden],
        hour: cal.hour as usize,
        dow: cal.day_of_week as usize,
        month: cal.month as usize - 1,
        year_row: params.year_row(cal.year),
        revision: params.revision,
    };

    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut z = [vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim]];

    for (t, &x) in window.iter().enumerate() {
        let row = t * h_dim;
        cache.h_prev[row..row + h_dim].copy_from_slice(&h);
        cache.c_prev[row..row + h_dim].copy_from_slice(&c);

        for (g, zg) in z.iter_mut().enumerate() {
            for (i, zv) in zg.iter_mut().enumerate() {
                *zv = params.w_x[g][i] * x + params.b[g][i];
            }
            let wh = &params.w_h[g];
            for (j, &hj) in h.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                let col = &wh[j * h_dim..(j + 1) * h_dim];
                for (zv, w) in zg.iter_mut().zip(col) {
                    *zv += w * hj;
                }
            }
        }

        for i in 0..h_dim {
            let gi = sigmoid(z[0][i]);
            let gf = sigmoid(z[1][i]);
            let gc = z[2][i].tanh();
            let go = sigmoid(z[3][i]);
            let ci = gf * c[i] + gi * gc;
            let tc = ci.tanh();
            cache.gate_i[row + i] = gi;
            cache.gate_f[row + i] = gf;
            cache.gate_c[row + i] = gc;
            cache.gate_o[row + i] = go;
            cache.c_state[row + i] = ci;
            cache.tanh_c[row + i] = tc;
            c[i] = ci;
            h[i] = go * tc;
        }
    }

    // Concatenate final hidden state with the four embedding vectors.
    let dims = &params.dims;
    cache.concat[..h_dim].copy_from_slice(&h);
    let mut offset = h_dim;
    for (table, dim, row) in [
        (&params.embed_hour, dims.embed_hour, cache.hour),
        (&params.embed_dow, dims.embed_dow, cache.dow),
        (&params.embed_month, dims.embed_month, cache.month),
        (&params.embed_year, dims.embed_year, cache.year_row),
    ] {
        cache.concat[offset..offset + dim].copy_from_slice(&table[row * dim..(row + 1) * dim]);
        offset += dim;
    }

    // Dense head over the masked concatenation.
    let m = dims.dense_hidden;
    cache.dense1_pre.copy_from_slice(&params.dense1_b);
    for j in 0..d {
        let u = cache.concat[j] * mask[j];
        if u == 0.0 {
            continue;
        }
        let col = &params.dense1_w[j * m..(j + 1) * m];
        for (pre, w) in cache.dense1_pre.iter_mut().zip(col) {
            *pre += w * u;
        }
    }
    for i in 0..m {
        cache.dense1_act[i] = cache.dense1_pre[i].max(0.0);
    }
    let prediction = dot4(&params.dense2_w, &cache.dense1_act) + params.dense2_b[0];
    (prediction, cache)
}

fn draw_mask(params: &LstmParams, training: bool, rng: &mut impl Rng) -> Vec<f64> {
    let d = params.dims.concat_len();
    let p = params.dropout_rate;
    if !training || p == 0.0 {
        return vec![1.0; d];
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    (0..d).map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 }).collect()
}

/// One forward evaluation. In training mode an inverted-scaling dropout mask
/// is drawn from `rng`; in evaluation mode the pass is deterministic.
pub fn forward(
    params: &LstmParams,
    sample: &SequenceSample,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(f64, ForwardCache), NeuralError> {
    params.check_window(&sample.temperature_window)?;
    let mask = draw_mask(params, training, rng);
    Ok(forward_with_mask(params, &sample.temperature_window, &sample.calendar, &mask))
}

/// Deterministic evaluation-mode prediction (scaled units).
pub fn predict(params: &LstmParams, sample: &SequenceSample) -> Result<f64, NeuralError> {
    params.check_window(&sample.temperature_window)?;
    let mask = vec![1.0; params.dims.concat_len()];
    let (pred, _) = forward_with_mask(params, &sample.temperature_window, &sample.calendar, &mask);
    Ok(pred)
}

/// Evaluation-mode predictions for a batch, order preserving.
pub fn predict_batch(
    params: &LstmParams,
    samples: &[SequenceSample],
) -> Result<Vec<f64>, NeuralError> {
    samples.iter().map(|s| predict(params, s)).collect()
}

/// Mean squared error.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, NeuralError> {
    if predictions.len() != targets.len() {
        return Err(NeuralError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / predictions.len() as f64)
}

/// Exact analytic gradients of the loss with respect to every parameter,
/// given `d(loss)/d(prediction)`, accumulated into `grads`. Embedding rows
/// not touched by the sample keep zero gradient.
pub fn backward_into(
    params: &LstmParams,
    cache: &ForwardCache,
    dloss_dpred: f64,
    grads: &mut LstmParams,
) -> Result<(), NeuralError> {
    if cache.revision != params.revision {
        return Err(NeuralError::StaleCache { params: params.revision, cache: cache.revision });
    }
    let h_dim = params.dims.hidden;
    let d = params.dims.concat_len();
    let m = params.dims.dense_hidden;
    let seq_len = cache.seq_len;

    // Dense head.
    grads.dense2_b[0] += dloss_dpred;
    let mut d_pre1 = vec![0.0; m];
    for i in 0..m {
        grads.dense2_w[i] += dloss_dpred * cache.dense1_act[i];
        let dv = dloss_dpred * params.dense2_w[i];
        d_pre1[i] = if cache.dense1_pre[i] > 0.0 { dv } else { 0.0 };
    }
    for (gb, dp) in grads.dense1_b.iter_mut().zip(&d_pre1) {
        *gb += dp;
    }
    let mut d_concat = vec![0.0; d];
    for j in 0..d {
        let u = cache.concat[j] * cache.mask[j];
        let col_range = j * m..(j + 1) * m;
        if u != 0.0 {
            let gcol = &mut grads.dense1_w[col_range.clone()];
            for (g, dp) in gcol.iter_mut().zip(&d_pre1) {
                *g += dp * u;
            }
        }
        let col = &params.dense1_w[col_range];
        d_concat[j] = dot4(col, &d_pre1) * cache.mask[j];
    }

    // Embedding rows of the target hour's features.
    let mut offset = h_dim;
    for (table, dim, row) in [
        (&mut grads.embed_hour, params.dims.embed_hour, cache.hour),
        (&mut grads.embed_dow, params.dims.embed_dow, cache.dow),
        (&mut grads.embed_month, params.dims.embed_month, cache.month),
        (&mut grads.embed_year, params.dims.embed_year, cache.year_row),
    ] {
        for k in 0..dim {
            table[row * dim + k] += d_concat[offset + k];
        }
        offset += dim;
    }

    // Backpropagation through time.
    let mut dh = d_concat[..h_dim].to_vec();
    let mut dc = vec![0.0; h_dim];
    let mut dz = [vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim]];
    for t in (0..seq_len).rev() {
        let row = t * h_dim;
        let x = cache.inputs[t];
        for i in 0..h_dim {
            let idx = row + i;
            let gi = cache.gate_i[idx];
            let gf = cache.gate_f[idx];
            let gc = cache.gate_c[idx];
            let go = cache.gate_o[idx];
            let tc = cache.tanh_c[idx];
            let c_prev = cache.c_prev[idx];

            let d_o = dh[i] * tc;
            dz[3][i] = d_o * go * (1.0 - go);
            let dci = dc[i] + dh[i] * go * (1.0 - tc * tc);
            dz[0][i] = dci * gc * gi * (1.0 - gi);
            dz[1][i] = dci * c_prev * gf * (1.0 - gf);
            dz[2][i] = dci * gi * (1.0 - gc * gc);
            dc[i] = dci * gf;
        }
        let h_prev = &cache.h_prev[row..row + h_dim];
        for (g, dzg) in dz.iter().enumerate() {
            for i in 0..h_dim {
                grads.w_x[g][i] += dzg[i] * x;
                grads.b[g][i] += dzg[i];
            }
            let gw = &mut grads.w_h[g];
            for (j, &hj) in h_prev.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                let col = &mut gw[j * h_dim..(j + 1) * h_dim];
                for (gv, dzv) in col.iter_mut().zip(dzg) {
                    *gv += dzv * hj;
                }
            }
        }
        for (j, dhj) in dh.iter_mut().enumerate() {
            let mut s = 0.0;
            for g in 0..4 {
                s += dot4(&params.w_h[g][j * h_dim..(j + 1) * h_dim], &dz[g]);
            }
            *dhj = s;
        }
    }
    Ok(())
}

/// Convenience wrapper returning a fresh gradient container.
pub fn backward(
    params: &LstmParams,
    cache: &ForwardCache,
    dloss_dpred: f64,
) -> Result<LstmParams, NeuralError> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, dloss_dpred, &mut grads)?;
    Ok(grads)
}

/// Model artifact: everything needed to reproduce predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralModel {
    pub version: u32,
    pub config: TrainConfig,
    pub temp_scaler: crate::features::ScalerParams,
    pub demand_scaler: crate::features::ScalerParams,
    pub params: LstmParams,
}

impl NeuralModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("neural artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        serde_json::from_str(text).map_err(|e| NeuralError::Artifact(e.to_string()))
    }
}

#[cfg(test)]
mod tests;
