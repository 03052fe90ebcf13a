// Scratch harness for sizing the winter-regime scenario (deleted before release).
use chrono::NaiveDate;
use demandcast::backcast::{run_pipeline, ModelKind, RunConfig, SeasonalMode};
use demandcast::ingest::HourlySeries;
use demandcast::synth::{generate, SynthScenario, WinterRegime};

fn dt(y: i32, m: u32, d: u32, h: u32) -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
}

fn winter_regime_joined(seed: u64) -> HourlySeries {
    let mut scenario = SynthScenario::constant(dt(2014, 12, 29, 0), dt(2016, 12, 31, 23), 3000.0);
    scenario.cooling_slope_mw_per_c = 100.0;
    scenario.heating_slope_mw_per_c = 0.0;
    scenario.balance_temp_c = 20.0;
    scenario.winter_regime = Some(WinterRegime { balance_temp_c: 12.0, slope_mw_per_c: 150.0 });
    scenario.hour_profile = (0..24)
        .map(|h| 120.0 * (std::f64::consts::TAU * (h as f64 - 17.0) / 24.0).cos())
        .collect();
    scenario.dow_profile = vec![40.0, 40.0, 40.0, 40.0, 40.0, -60.0, -80.0];
    scenario.noise_sigma_mw = 50.0;
    scenario.temperature.mean_c = 16.0;
    scenario.temperature.seasonal_amp_c = 12.0;
    scenario.temperature.diurnal_amp_c = 4.0;
    scenario.temperature.noise_sigma_c = 2.5;
    let out = generate(&scenario, seed).unwrap();
    let records: Vec<_> = out
        .series
        .records()
        .iter()
        .map(|r| {
            let mut r = *r;
            if r.timestamp < dt(2015, 1, 1, 0) {
                r.demand_mw = None;
            }
            r
        })
        .collect();
    HourlySeries::from_records(records, vec![]).unwrap()
}

fn config(mode: SeasonalMode, kind: ModelKind, seed: u64, epochs: usize) -> RunConfig {
    let mut config = RunConfig::default();
    config.seed = seed;
    config.backcast.start = dt(2014, 12, 29, 0);
    config.backcast.end = dt(2014, 12, 31, 23);
    config.data.holdout_frac = 0.5;
    config.model.kind = kind;
    config.model.seasonal_mode = mode;
    config.train.epochs = epochs;
    config.train.hidden_size = 16;
    config.train.dense_hidden = 16;
    config.train.embed_hour_dim = 4;
    config.train.embed_dow_dim = 2;
    config.train.embed_month_dim = 4;
    config.train.embed_year_dim = 2;
    config.train.batch_size = 128;
    config
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let joined = winter_regime_joined(seed);
        let annual = run_pipeline(&config(SeasonalMode::Annual, ModelKind::Both, seed, epochs), &joined).unwrap();
        let seasonal = run_pipeline(&config(SeasonalMode::SummerWinter, ModelKind::Lstm, seed, epochs), &joined).unwrap();
        let pw = &annual.metrics["piecewise"];
        let lstm = &annual.metrics["lstm"];
        let lstm_seasonal = &seasonal.metrics["lstm"];
        println!(
            "seed {seed} ({:.0}s): (a) lstm rmse {:.1} vs pw rmse {:.1} (need < by 2%) | (b) annual winter r2 {:.3} vs summer r2 {:.3} | (c) winter-model r2 {:.3} vs annual winter {:.3}",
            t0.elapsed().as_secs_f64(),
            lstm.rmse_mw,
            pw.rmse_mw,
            lstm.per_season["winter"].r2,
            lstm.per_season["summer"].r2,
            lstm_seasonal.per_season["winter"].r2,
            lstm.per_season["winter"].r2,
        );
    }
}
