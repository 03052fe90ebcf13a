use chrono::{NaiveDate};
use demandcast::features::{chrono_split, fit_scaler, make_sequences};
use demandcast::neural::{train, TrainConfig};
use demandcast::synth::{generate, SynthScenario};

fn main() {
    let dt = |y: i32, m: u32, d: u32, h: u32| NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap();
    let mut scenario = SynthScenario::constant(dt(2015, 1, 1, 0), dt(2016, 12, 31, 23), 3000.0);
    scenario.cooling_slope_mw_per_c = 80.0;
    scenario.heating_slope_mw_per_c = 40.0;
    scenario.balance_temp_c = 16.0;
    scenario.hour_profile = (0..24).map(|h| 150.0 * (std::f64::consts::TAU * (h as f64 - 17.0) / 24.0).cos()).collect();
    scenario.noise_sigma_mw = 60.0;
    let out = generate(&scenario, 1).unwrap();
    let (holdout, train_series) = chrono_split(&out.series, 0.2).unwrap();
    let temps: Vec<f64> = train_series.records().iter().map(|r| r.temperature_c).collect();
    let demands: Vec<f64> = train_series.records().iter().filter_map(|r| r.demand_mw).collect();
    let ts = fit_scaler(&temps).unwrap();
    let ds = fit_scaler(&demands).unwrap();
    let train_samples = make_sequences(&train_series, 24, &ts, Some(&ds)).unwrap();
    let val_samples = make_sequences(&holdout, 24, &ts, Some(&ds)).unwrap();
    eprintln!("train {} val {}", train_samples.len(), val_samples.len());
    let config = TrainConfig { epochs: 25, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let outcome = train(&train_samples, &val_samples, &ds, &config).unwrap();
    eprintln!("25 epochs took {:.1}s", t0.elapsed().as_secs_f64());
    for e in &outcome.trace.epochs { eprintln!("epoch {} loss {:.6} val {:.2}", e.epoch, e.train_loss, e.val_rmse_mw); }
}
