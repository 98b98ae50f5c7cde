mod common;

use candle_core::Device;

use pla_core::auth::{calibrate_threshold, DistanceKind};
use pla_core::checkpoint::PredictorKind;
use pla_core::csi::ComplexCsi;
use pla_core::diffusion::{train_gdm, DenoiserSpec, GdmPredictor, GdmSpec, ScheduleConfig};
use pla_core::fingerprint::NormMode;
use pla_core::harness::{
    build_predictor, load_cells, measure_latency, prepare_data, regenerate_report, run_sweep,
    scheme_config, train_scheme, ObservedCell, METRICS_FILE, SUMMARY_FILE,
};
use pla_core::predictor::{DirectPredictor, Predictor};
use pla_core::scenario::{generate_pair_sequence, ScenarioConfig};
use pla_core::train::TrainConfig;

#[test]
fn loss_gradients_match_finite_differences() {
    let g = common::denoiser_gradient_check(40, 1e-4);
    assert_eq!(g.failures, 0, "max relative error {}", g.max_rel);
}

#[test]
fn normalization_round_trips_over_wide_magnitudes() {
    let (rel, entry) = common::normalization_round_trip(500, 1);
    assert!(rel < 1e-6, "{rel}");
    assert!(entry <= 1.0, "{entry}");
}

#[test]
fn forward_marginal_variance_matches_schedule() {
    for (t, dev) in common::forward_marginal_deviation(100_000, 0.5) {
        assert!(dev < 0.02, "t={t}: {dev}");
    }
}

#[test]
fn calibrated_false_alarm_is_within_binomial_interval() {
    let n = 4000;
    let fa = common::calibration_false_alarm(0.05, 2000, n);
    let (lo, hi) = common::binomial_interval_95(0.05, n);
    assert!(fa >= lo && fa <= hi, "{fa} outside [{lo}, {hi}]");
}

fn identity_scenario(n_train: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        rho_aj: 1.0,
        n_samples_train: n_train,
        n_samples_val: 200,
        n_samples_test: 200,
        ..Default::default()
    }
}

fn small_gdm() -> GdmSpec {
    GdmSpec {
        denoiser: DenoiserSpec {
            max_channels: 16,
            time_dim: 16,
            n_antennas: 4,
            n_subcarriers: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn diffusion_predictor_learns_a_fully_correlated_channel() {
    let s = generate_pair_sequence(&identity_scenario(2000)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        ..Default::default()
    };
    let ckpt = train_gdm(&s.train, &small_gdm(), &ScheduleConfig::default(), NormMode::PerSample, &cfg, &Device::Cpu).unwrap();
    let p = GdmPredictor::from_checkpoint(&ckpt, &Device::Cpu).unwrap();
    let jack: Vec<&ComplexCsi> = s.test.pairs.iter().map(|p| &p.jack).collect();
    let pred = p.predict_with_metas(&jack, None).unwrap();
    let nmse: f64 = pred
        .iter()
        .zip(&s.test.pairs)
        .map(|(x, pair)| pla_core::auth::fingerprint_distance(x, &pair.alice, DistanceKind::Nmse).unwrap())
        .sum::<f64>()
        / pred.len() as f64;
    assert!(nmse < 0.05, "held-out NMSE {nmse}");

    // loss on unseen pairs stays near the loss on the training pairs
    let train_loss = p.mean_loss(&s.train, 7).unwrap();
    let val_loss = p.mean_loss(&s.val, 7).unwrap();
    assert!(val_loss < 2.0 * train_loss, "val {val_loss} vs train {train_loss}");
}

#[test]
fn calibration_uses_the_predictor_on_validation_pairs() {
    let s = generate_pair_sequence(&identity_scenario(10)).unwrap();
    let direct = DirectPredictor;
    let th = calibrate_threshold(&direct, &s.val, DistanceKind::Nmse, 0.05).unwrap();
    // with a perfectly correlated channel and no noise the direct scheme is exact
    assert!(th.tau < 1e-12, "{}", th.tau);
    assert_eq!(th.calibration.as_ref().unwrap().n_validation, 200);
}

#[test]
fn sweep_is_byte_identical_and_regenerates_from_raw_verdicts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rows_a = run_sweep(&common::tiny_plan(a.path()), &Device::Cpu).unwrap();
    let rows_b = run_sweep(&common::tiny_plan(b.path()), &Device::Cpu).unwrap();
    assert_eq!(rows_a.len(), 5 * 2);
    assert_eq!(rows_a, rows_b);
    let table_a = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(table_a, std::fs::read(b.path().join(METRICS_FILE)).unwrap());
    let summary = |d: &std::path::Path| std::fs::read(d.join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary(a.path()), summary(b.path()));

    std::fs::remove_file(a.path().join(METRICS_FILE)).unwrap();
    let again = regenerate_report(a.path()).unwrap();
    assert_eq!(again.len(), rows_a.len());
    assert_eq!(table_a, std::fs::read(a.path().join(METRICS_FILE)).unwrap());
    for (cell, row) in load_cells(a.path()).unwrap().iter().zip(&rows_a) {
        assert_eq!(cell.report().unwrap(), *row);
    }
}

#[test]
fn latency_grows_with_sampling_steps() {
    let plan = common::tiny_plan(std::path::Path::new("unused"));
    let data = prepare_data(&plan.data, 0).unwrap();
    let cfg = scheme_config(&plan, PredictorKind::Gdm, &data, 0).unwrap();
    let ckpt = train_scheme(&cfg, &data.train, &Device::Cpu).unwrap();
    let cell = ObservedCell::new(&data, 1, 20.0, 0, Some(10)).unwrap();
    let history = cell.histories(1, false)[0];
    let observed = &cell.alice_test[0];
    let th = pla_core::auth::AuthThreshold::new(DistanceKind::Nmse, 0.5).unwrap();
    let median = |p: &dyn Predictor| measure_latency(p, history, observed, &th, 1, 7).unwrap().median_ms;

    let mut last = 0.0;
    for steps in [1, 10, 50] {
        let p = build_predictor(&ckpt, steps, &Device::Cpu).unwrap();
        let m = median(p.as_ref());
        assert!(m.is_finite() && m > last, "{steps} steps: {m} ms after {last} ms");
        last = m;
    }
    assert!(median(&DirectPredictor) < last);
}
