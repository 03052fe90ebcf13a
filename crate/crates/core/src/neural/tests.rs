use chrono::{NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{
    chrono_split, fit_scaler, make_sequences, CalendarFeatures, ScalerParams,
};
use crate::synth::{generate, SynthScenario};

fn dt(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
}

fn tiny_dims() -> NetDims {
    NetDims { hidden: 4, embed_hour: 2, embed_dow: 2, embed_month: 2, embed_year: 2, dense_hidden: 3 }
}

fn tiny_params(seed: u64, dropout: f64) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LstmParams::init(tiny_dims(), dropout, vec![2016, 2017], &mut rng)
}

fn sample(window: Vec<f64>, cal: CalendarFeatures, target: Option<f64>) -> SequenceSample {
    SequenceSample {
        target_ts: dt(2016, 6, 15, cal.hour as u32),
        target_temperature_c: *window.last().unwrap(),
        temperature_window: window,
        calendar: cal,
        target_demand_scaled: target,
        target_demand_mw: target.map(|t| t * 1000.0),
    }
}

fn cal(hour: u8, dow: u8, month: u8, year: i32) -> CalendarFeatures {
    CalendarFeatures { hour, day_of_week: dow, month, year }
}

#[test]
fn init_is_deterministic_and_bounded() {
    let a = tiny_params(9, 0.2);
    let b = tiny_params(9, 0.2);
    assert_eq!(a, b);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = NetDims { hidden: 8, ..tiny_dims() };
    let p = LstmParams::init(dims, 0.2, vec![2015], &mut rng);
    let bound = 1.0 / 8f64.sqrt();
    for g in 0..4 {
        assert!(p.w_x[g].iter().chain(&p.w_h[g]).all(|w| w.abs() <= bound));
    }
    assert!(p.embed_hour.iter().all(|w| w.abs() <= 0.05));
    // Forget-gate bias starts at one, every other bias at zero.
    assert!(p.b[1].iter().all(|&v| v == 1.0));
    for g in [0usize, 2, 3] {
        assert!(p.b[g].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_network_predicts_dense2_bias() {
    let params = tiny_params(3, 0.0).zeros_like();
    let s = sample(vec![0.3, 0.5, 0.7], cal(4, 2, 6, 2016), None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (pred, _) = forward(&params, &s, false, &mut rng).unwrap();
    assert_eq!(pred, 0.0);
}

#[test]
fn eval_mode_is_pure() {
    let params = tiny_params(5, 0.5);
    let s = sample(vec![0.1, 0.9, 0.4], cal(12, 6, 3, 2017), None);
    let first = predict(&params, &s).unwrap();
    for _ in 0..5 {
        assert_eq!(predict(&params, &s).unwrap(), first);
    }
    // Training mode with dropout enabled is stochastic across rng draws.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, _) = forward(&params, &s, true, &mut rng).unwrap();
    let (b, _) = forward(&params, &s, true, &mut rng).unwrap();
    assert_ne!(a, b);
}

#[test]
fn batch_predictions_preserve_order() {
    let params = tiny_params(5, 0.0);
    let samples: Vec<SequenceSample> = (0..6)
        .map(|i| sample(vec![0.1 * i as f64, 0.2, 0.3], cal(i as u8, 0, 1, 2016), None))
        .collect();
    let batch = predict_batch(&params, &samples).unwrap();
    let singles: Vec<f64> = samples.iter().map(|s| predict(&params, s).unwrap()).collect();
    assert_eq!(batch, singles);
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
    assert_eq!(mse_loss(&[1.0], &[0.0]).unwrap(), 1.0);
    assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(NeuralError::LengthMismatch(1, 2))));
}

#[test]
fn zero_loss_gradient_gives_zero_grads() {
    let params = tiny_params(11, 0.0);
    let s = sample(vec![0.2, 0.4, 0.6], cal(7, 3, 9, 2017), None);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (_, cache) = forward(&params, &s, true, &mut rng).unwrap();
    let grads = backward(&params, &cache, 0.0).unwrap();
    for (name, tensor) in grads.tensors() {
        assert!(tensor.iter().all(|&g| g == 0.0), "nonzero gradient in {name}");
    }
}

#[test]
fn untouched_embedding_rows_get_zero_gradient() {
    let params = tiny_params(13, 0.0);
    let s = sample(vec![0.2, 0.4, 0.6], cal(7, 3, 9, 2016), None);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (_, cache) = forward(&params, &s, true, &mut rng).unwrap();
    let grads = backward(&params, &cache, 1.0).unwrap();
    let d = params.dims.embed_hour;
    for hour in 0..24 {
        let row = &grads.embed_hour[hour * d..(hour + 1) * d];
        if hour == 7 {
            assert!(row.iter().any(|&g| g != 0.0), "target hour row should receive gradient");
        } else {
            assert!(row.iter().all(|&g| g == 0.0), "hour {hour} row should be untouched");
        }
    }
}

#[test]
fn stale_cache_is_rejected() {
    let mut params = tiny_params(17, 0.0);
    let s = sample(vec![0.2, 0.4, 0.6], cal(7, 3, 9, 2016), None);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (_, cache) = forward(&params, &s, true, &mut rng).unwrap();
    let grads = backward(&params, &cache, 1.0).unwrap();
    let mut adam = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut adam, 0.01);
    assert!(matches!(
        backward(&params, &cache, 1.0),
        Err(NeuralError::StaleCache { .. })
    ));
}

#[test]
fn gradients_match_finite_differences() {
    let report = grad_check(&GradCheckConfig::default(), 1e-4);
    assert!(
        report.passed,
        "max relative error {} in {}",
        report.max_rel_error, report.worst_tensor
    );
    assert!(report.max_rel_error < 1e-4);
}

#[test]
fn gradcheck_tolerance_semantics_and_determinism() {
    let strict = grad_check(&GradCheckConfig::default(), 1e-12);
    assert!(!strict.passed, "a 1e-12 tolerance sits below the finite-difference floor");
    let again = grad_check(&GradCheckConfig::default(), 1e-12);
    assert_eq!(strict.max_rel_error, again.max_rel_error);
    assert_eq!(strict.worst_tensor, again.worst_tensor);
}

#[test]
fn dropout_preserves_expectation() {
    let params = tiny_params(23, 0.2);
    let d = params.dims.concat_len();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    let mut sums = vec![0.0; d];
    for _ in 0..draws {
        let mask = draw_mask(&params, true, &mut rng);
        for (s, m) in sums.iter_mut().zip(&mask) {
            *s += m;
        }
    }
    for s in sums {
        let mean = s / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "dropped-and-rescaled mean {mean} off by > 2%");
    }
}

#[test]
fn forced_gates_hold_cell_state_constant() {
    // Weight surgery: forget gate saturated at 1, input gate at 0; the cell
    // state must then stay at its initial value through every timestep.
    let mut params = tiny_params(29, 0.0);
    let h = params.dims.hidden;
    params.w_x[0] = vec![0.0; h];
    params.w_h[0] = vec![0.0; h * h];
    params.b[0] = vec![-50.0; h];
    params.w_x[1] = vec![0.0; h];
    params.w_h[1] = vec![0.0; h * h];
    params.b[1] = vec![50.0; h];

    let s = sample(vec![0.9, 0.1, 0.5, 0.7], cal(3, 1, 2, 2016), None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) = forward(&params, &s, false, &mut rng).unwrap();
    for t in 0..cache.seq_len() {
        for &c in cache.cell_state(t) {
            assert!(c.abs() < 1e-15, "cell state drifted to {c} at step {t}");
        }
    }
}

/// Synthetic linear task: demand = base + slope * (T - T_b) with T_b below
/// every realized temperature, so the response is exactly linear.
fn linear_task(
    seed: u64,
) -> (Vec<SequenceSample>, Vec<SequenceSample>, ScalerParams, f64) {
    let mut scenario = SynthScenario::constant(dt(2015, 6, 1, 0), dt(2015, 6, 30, 23), 2000.0);
    scenario.cooling_slope_mw_per_c = 40.0;
    scenario.balance_temp_c = -50.0;
    scenario.noise_sigma_mw = 20.0;
    let out = generate(&scenario, seed).unwrap();
    let (holdout, train_series) = chrono_split(&out.series, 0.2).unwrap();
    let train_temps: Vec<f64> = train_series.records().iter().map(|r| r.temperature_c).collect();
    let train_demand: Vec<f64> =
        train_series.records().iter().filter_map(|r| r.demand_mw).collect();
    let temp_scaler = fit_scaler(&train_temps).unwrap();
    let demand_scaler = fit_scaler(&train_demand).unwrap();
    let train_samples = make_sequences(&train_series, 24, &temp_scaler, Some(&demand_scaler)).unwrap();
    let val_samples = make_sequences(&holdout, 24, &temp_scaler, Some(&demand_scaler)).unwrap();
    (train_samples, val_samples, demand_scaler, scenario.noise_sigma_mw)
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden_size: 8,
        embed_hour_dim: 2,
        embed_dow_dim: 2,
        embed_month_dim: 2,
        embed_year_dim: 2,
        dense_hidden: 8,
        batch_size: 64,
        dropout_rate: 0.0,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn train_fits_synthetic_linear_task() {
    let (train_samples, val_samples, demand_scaler, sigma) = linear_task(41);
    let outcome = train(&train_samples, &val_samples, &demand_scaler, &small_config(200)).unwrap();
    assert!(
        outcome.best_val_rmse_mw <= 1.5 * sigma,
        "validation RMSE {} exceeds 1.5 sigma = {}",
        outcome.best_val_rmse_mw,
        1.5 * sigma
    );
}

#[test]
fn train_single_epoch_trace() {
    let (train_samples, val_samples, demand_scaler, _) = linear_task(43);
    let outcome = train(&train_samples, &val_samples, &demand_scaler, &small_config(1)).unwrap();
    assert_eq!(outcome.trace.epochs.len(), 1);
    assert_eq!(outcome.best_epoch, 1);
}

#[test]
fn train_is_deterministic_given_seed() {
    let (train_samples, val_samples, demand_scaler, _) = linear_task(47);
    let config = small_config(3);
    let a = train(&train_samples, &val_samples, &demand_scaler, &config).unwrap();
    let b = train(&train_samples, &val_samples, &demand_scaler, &config).unwrap();
    for (ea, eb) in a.trace.epochs.iter().zip(&b.trace.epochs) {
        assert_eq!(ea.train_loss, eb.train_loss);
        assert_eq!(ea.val_rmse_mw, eb.val_rmse_mw);
        assert_eq!(ea.lr, eb.lr);
    }
    for ((_, ta), (_, tb)) in a.params.tensors().into_iter().zip(b.params.tensors()) {
        assert_eq!(ta, tb);
    }
}

#[test]
fn both_optimizers_cut_training_loss() {
    let (train_samples, val_samples, demand_scaler, _) = linear_task(53);
    for (optimizer, lr) in [(OptimizerKind::Adam, 0.009), (OptimizerKind::Sgd, 0.15)] {
        let config = TrainConfig {
            optimizer,
            learning_rate: lr,
            ..small_config(80)
        };
        let outcome = train(&train_samples, &val_samples, &demand_scaler, &config).unwrap();
        let first = outcome.trace.epochs.first().unwrap().train_loss;
        let last = outcome.trace.epochs.last().unwrap().train_loss;
        assert!(
            last <= 0.1 * first,
            "{optimizer:?} reduced loss only from {first} to {last}"
        );
    }
}

#[test]
fn scheduler_is_recorded_in_trace() {
    let (train_samples, val_samples, demand_scaler, _) = linear_task(59);
    let config = TrainConfig {
        scheduler: Some(SchedulerConfig { factor: 0.5, patience: 1, min_lr: 1e-5 }),
        ..small_config(6)
    };
    let outcome = train(&train_samples, &val_samples, &demand_scaler, &config).unwrap();
    // The recorded lr changes only when the scheduler fires and never rises.
    let lrs: Vec<f64> = outcome.trace.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(lrs[0], config.learning_rate);
}

#[test]
fn out_of_vocabulary_year_uses_mean_row() {
    let mut params = tiny_params(61, 0.0);
    params.refresh_year_fallback_row();
    let d = params.dims.embed_year;
    let rows = params.year_vocab.len();
    for j in 0..d {
        let mean = (0..rows).map(|r| params.embed_year[r * d + j]).sum::<f64>() / rows as f64;
        assert!((params.embed_year[rows * d + j] - mean).abs() < 1e-15);
    }
    assert_eq!(params.year_row(1980), rows);
    assert_eq!(params.year_row(2016), 0);
}

#[test]
fn artifact_roundtrip() {
    let params = tiny_params(67, 0.2);
    let model = NeuralModel {
        version: 1,
        config: TrainConfig::default(),
        temp_scaler: ScalerParams { feature_min: -5.0, feature_max: 38.0 },
        demand_scaler: ScalerParams { feature_min: 900.0, feature_max: 4800.0 },
        params,
    };
    let restored = NeuralModel::from_json(&model.to_json()).unwrap();
    assert_eq!(model.params, restored.params);
    assert_eq!(model.temp_scaler, restored.temp_scaler);
    let s = sample(vec![0.5; 3], cal(8, 4, 11, 2017), None);
    assert_eq!(predict(&model.params, &s).unwrap(), predict(&restored.params, &s).unwrap());
}
