//! Monte Carlo properties of calibrated detectors.

use floc::calibration::{calibrate_arl, calibrate_multi_bin, BinLayout, CalibrationSpec, ARL_ETA};
use floc::detector::{multi_bin_run, run, DetectorConfig, PrechangeMode};
use floc::experiments::{estimate_arl, ArlSpec};
use floc::prechange::TimeScale;
use floc::signal_model::{generate_series, replication_seed, NoiseSpec, SignalParams};

fn null_series(len: usize, seed: u64) -> Vec<f64> {
    generate_series(&SignalParams::constant(0.0), len, &NoiseSpec::standard(), seed)
        .unwrap()
        .values
}

fn spec(layout: BinLayout, k: usize, horizon: usize, replications: usize, seed: u64) -> CalibrationSpec {
    CalibrationSpec {
        replications,
        eta: ARL_ETA,
        horizon,
        k,
        layout,
        noise: NoiseSpec::standard(),
        prechange: PrechangeMode::Fit(TimeScale::Index),
        master_seed: seed,
    }
}

#[test]
fn multi_bin_alarms_no_later_than_any_scale() {
    let configs = [DetectorConfig::both(2, 1.2, 0.25), DetectorConfig::both(15, 0.6, 0.03)];
    let mode = PrechangeMode::Fit(TimeScale::Index);
    let mut union = 0;
    let mut single = [0; 2];
    for i in 0..300 {
        let series = null_series(1500, replication_seed(77, i));
        let multi = multi_bin_run(&series, 500, &configs, &mode).unwrap();
        union += usize::from(multi.event.is_some());
        for (c, count) in configs.iter().zip(single.iter_mut()) {
            let one = run(&series, 500, c, &mode, false).unwrap();
            *count += usize::from(one.event.is_some());
            assert!(multi.alarm_time() <= one.alarm_time());
        }
    }
    assert!(union >= single[0].max(single[1]));
}

#[test]
fn run_lengths_look_exponential() {
    let cal = calibrate_arl(&spec(BinLayout::jump(10), 1000, 1000, 4000, 31)).unwrap();
    let report = estimate_arl(&ArlSpec::for_target(cal.config(), 1000, 1000, 500, 32)).unwrap();
    let ratio = report.mean_sd_ratio();
    assert!((ratio - 1.0).abs() <= 0.25, "mean/sd = {ratio}");
}

#[test]
fn two_scale_arl_calibration() {
    let k = 500;
    let target = 500;
    let cal = calibrate_multi_bin(
        &spec(BinLayout::default(), k, target, 10_000, 41),
        &[BinLayout::both(2), BinLayout::both(40)],
    )
    .unwrap();
    let configs = cal.detector_configs();
    assert_eq!(configs.len(), 2);
    let cap = 10 * target;
    let mode = PrechangeMode::Fit(TimeScale::Index);
    let lengths: Vec<f64> = (0..500)
        .map(|i| {
            let series = null_series(k + cap, replication_seed(42, i));
            let out = multi_bin_run(&series, k, &configs, &mode).unwrap();
            (out.alarm_time() - k) as f64
        })
        .collect();
    let arl = lengths.iter().sum::<f64>() / lengths.len() as f64;
    assert!((350.0..=700.0).contains(&arl), "ARL {arl}, thresholds {:?}", cal.scales);
}
