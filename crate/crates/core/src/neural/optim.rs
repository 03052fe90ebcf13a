//! Adam / SGD parameter updates and the reduce-on-plateau schedule.

use serde::{Deserialize, Serialize};

use super::LstmParams;

/// Adam moment estimates, aligned with the canonical tensor order of
/// [`LstmParams::tensors`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &LstmParams) -> Self {
        let shapes: Vec<Vec<f64>> =
            params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { m: shapes.clone(), v: shapes, step: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut LstmParams, grads: &LstmParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (beta1, beta2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (k, ((_, tensor), (_, grad))) in
        params.tensors_mut().into_iter().zip(grads.tensors()).enumerate()
    {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..tensor.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            tensor[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.bump_revision();
}

/// Plain stochastic gradient descent update.
pub fn sgd_step(params: &mut LstmParams, grads: &LstmParams, lr: f64) {
    for ((_, tensor), (_, grad)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (p, g) in tensor.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
    params.bump_revision();
}

/// Reduce-on-plateau: when the validation metric fails to strictly improve
/// for `patience` consecutive epochs, the learning rate is multiplied by
/// `factor` (floored at `min_lr`) and the stall counter resets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    lr: f64,
    best: Option<f64>,
    stall: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "factor must be in (0, 1)");
        assert!(patience >= 1, "patience must be at least 1");
        Self { factor, patience, min_lr, lr: initial_lr, best: None, stall: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation metric; returns the learning rate to use
    /// from the next epoch on.
    pub fn step(&mut self, validation_metric: f64) -> f64 {
        match self.best {
            Some(best) if validation_metric >= best => {
                self.stall += 1;
                if self.stall >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.stall = 0;
                }
            }
            _ => {
                self.best = Some(validation_metric);
                self.stall = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_params() -> LstmParams {
        let dims = NetDims {
            hidden: 2,
            embed_hour: 2,
            embed_dow: 2,
            embed_month: 2,
            embed_year: 2,
            dense_hidden: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        LstmParams::init(dims, 0.0, vec![2015], &mut rng)
    }

    #[test]
    fn adam_first_step_closed_form() {
        // With g = 1 everywhere: m_hat = 1, v_hat = 1, so the update is
        // lr / (1 + eps) regardless of the gradient scale.
        let mut params = tiny_params();
        let before = params.dense2_b[0];
        let mut grads = params.zeros_like();
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 1.0);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.009);
        let delta = params.dense2_b[0] - before;
        let expected = -0.009 * (1.0 / (1.0 + 1e-8));
        assert!((delta - expected).abs() < 1e-15, "delta {delta} vs {expected}");
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut params = tiny_params();
        let snapshot = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.009);
        for ((_, a), (_, b)) in params.tensors().into_iter().zip(snapshot.tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_first_step_magnitude_invariant_to_scale() {
        for g in [1e-6, 1e-3, 1.0, 1e3] {
            let mut params = tiny_params();
            let before = params.dense2_b[0];
            let mut grads = params.zeros_like();
            grads.dense2_b[0] = g;
            let mut state = AdamState::new(&params);
            adam_step(&mut params, &grads, &mut state, 0.009);
            let delta = (params.dense2_b[0] - before).abs();
            // First-step magnitude is exactly lr * |g| / (|g| + eps), which
            // is essentially lr at every gradient scale.
            let closed_form = 0.009 * g / (g + 1e-8);
            assert!((delta - closed_form).abs() < 1e-12, "g = {g}: delta {delta}");
            assert!((delta - 0.009).abs() < 0.009 * 0.011, "g = {g}: delta {delta} not near lr");
        }
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut params = tiny_params();
        let before = params.dense2_b[0];
        let mut grads = params.zeros_like();
        grads.dense2_b[0] = 2.0;
        sgd_step(&mut params, &grads, 0.1);
        assert!((params.dense2_b[0] - (before - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn scheduler_monotone_improvement_keeps_lr() {
        let mut s = PlateauScheduler::new(0.01, 0.5, 2, 1e-6);
        for m in [5.0, 4.9, 4.8] {
            assert_eq!(s.step(m), 0.01);
        }
    }

    #[test]
    fn scheduler_halves_after_patience_stalls() {
        let mut s = PlateauScheduler::new(0.01, 0.5, 2, 1e-6);
        assert_eq!(s.step(5.0), 0.01);
        assert_eq!(s.step(5.0), 0.01);
        assert_eq!(s.step(5.0), 0.005);
    }

    #[test]
    fn scheduler_respects_floor() {
        let mut s = PlateauScheduler::new(1e-6, 0.5, 1, 1e-6);
        s.step(1.0);
        for _ in 0..5 {
            assert_eq!(s.step(2.0), 1e-6);
        }
    }
}
