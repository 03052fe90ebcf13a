//! Central finite-difference verification of the analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward_into, forward_with_mask, LstmParams, NetDims};
use crate::features::CalendarFeatures;

/// Configuration of the check: a deliberately tiny network so the exhaustive
/// finite-difference sweep stays fast.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub hidden: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub dense_hidden: usize,
    pub dropout_rate: f64,
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            hidden: 4,
            seq_len: 3,
            embed_dim: 2,
            dense_hidden: 3,
            dropout_rate: 0.2,
            samples: 4,
            step: 1e-5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub per_tensor: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
    pub parameter_count: usize,
}

struct Case {
    window: Vec<f64>,
    calendar: CalendarFeatures,
    mask: Vec<f64>,
    target: f64,
}

fn build_cases(params: &LstmParams, cfg: &GradCheckConfig, rng: &mut impl Rng) -> Vec<Case> {
    let d = params.dims.concat_len();
    let keep = 1.0 - cfg.dropout_rate;
    (0..cfg.samples)
        .map(|i| {
            let window: Vec<f64> = (0..cfg.seq_len).map(|_| rng.random_range(0.0..1.0)).collect();
            let calendar = CalendarFeatures {
                hour: rng.random_range(0..24u8),
                day_of_week: rng.random_range(0..7u8),
                month: rng.random_range(1..=12u8),
                year: params.year_vocab[i % params.year_vocab.len()],
            };
            // Fixed per-case dropout mask so the loss is a deterministic
            // function of the parameters during differencing.
            let mask: Vec<f64> = (0..d)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let target = rng.random_range(0.0..1.0);
            Case { window, calendar, mask, target }
        })
        .collect()
}

fn loss(params: &LstmParams, cases: &[Case]) -> f64 {
    let sse: f64 = cases
        .iter()
        .map(|c| {
            let (pred, _) = forward_with_mask(params, &c.window, &c.calendar, &c.mask);
            let err = pred - c.target;
            err * err
        })
        .sum();
    sse / cases.len() as f64
}

/// Compares analytic gradients against central finite differences for every
/// parameter, reporting the maximum relative error. Deterministic per seed.
pub fn grad_check(cfg: &GradCheckConfig, tolerance: f64) -> GradCheckReport {
    let dims = NetDims {
        hidden: cfg.hidden,
        embed_hour: cfg.embed_dim,
        embed_dow: cfg.embed_dim,
        embed_month: cfg.embed_dim,
        embed_year: cfg.embed_dim,
        dense_hidden: cfg.dense_hidden,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = LstmParams::init(dims, cfg.dropout_rate, vec![2016, 2017], &mut rng);
    let cases = build_cases(&params, cfg, &mut rng);

    // Analytic gradients of the mean squared error over the cases.
    let mut analytic = params.zeros_like();
    for c in &cases {
        let (pred, cache) = forward_with_mask(&params, &c.window, &c.calendar, &c.mask);
        let dloss = 2.0 * (pred - c.target) / cases.len() as f64;
        backward_into(&params, &cache, dloss, &mut analytic).expect("fresh cache");
    }

    let mut per_tensor = Vec::new();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut scratch = params.clone();
    let tensor_count = params.tensors().len();
    for k in 0..tensor_count {
        let name = params.tensors()[k].0.to_string();
        let len = params.tensors()[k].1.len();
        let mut tensor_max = 0.0f64;
        for i in 0..len {
            let original = scratch.tensors()[k].1[i];
            scratch.tensors_mut()[k].1[i] = original + cfg.step;
            let plus = loss(&scratch, &cases);
            scratch.tensors_mut()[k].1[i] = original - cfg.step;
            let minus = loss(&scratch, &cases);
            scratch.tensors_mut()[k].1[i] = original;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.tensors()[k].1[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            tensor_max = tensor_max.max(rel);
        }
        if tensor_max > max_rel {
            max_rel = tensor_max;
            worst = name.clone();
        }
        per_tensor.push((name, tensor_max));
    }

    GradCheckReport {
        max_rel_error: max_rel,
        worst_tensor: worst,
        per_tensor,
        tolerance,
        passed: max_rel < tolerance,
        parameter_count: params.parameter_count(),
    }
}
