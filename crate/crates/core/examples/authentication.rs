//! Calibrate a threshold on legitimate validation trials, then judge
//! noisy Alice and Eve transmissions and summarise the decisions.
//!
//!     cargo run --release --example authentication

use pla_core::auth::{
    authenticate, calibrate_from_distances, fingerprint_distance, DistanceKind, MetricsReport,
};
use pla_core::predictor::direct_reference;
use pla_core::scenario::{add_estimation_noise, generate_pair_sequence, ScenarioConfig};

fn main() -> pla_core::Result<()> {
    let snr = 15.0;
    let cfg = ScenarioConfig {
        rho_aj: 0.95,
        rho_ae: 0.5,
        n_samples_train: 1,
        n_samples_val: 1000,
        n_samples_test: 1000,
        ..Default::default()
    };
    let data = generate_pair_sequence(&cfg)?;

    // the reference here is Jack's own observation; any predictor fits in its place
    let mut val = Vec::new();
    for (i, p) in data.val.pairs.iter().enumerate() {
        let reference = direct_reference(&add_estimation_noise(&p.jack, snr, i as u64)?);
        let alice = add_estimation_noise(&p.alice, snr, 10_000 + i as u64)?;
        val.push(fingerprint_distance(&alice, &reference, DistanceKind::Nmse)?);
    }
    let th = calibrate_from_distances(&val, DistanceKind::Nmse, 0.05)?;
    println!("tau {:.4} from {:?}", th.tau, th.calibration);

    let mut verdicts = Vec::new();
    for (i, (p, eve)) in data.test.pairs.iter().zip(&data.test.eve_samples).enumerate() {
        let t = i as u64;
        let reference = direct_reference(&add_estimation_noise(&p.jack, snr, 20_000 + t)?);
        verdicts.push(authenticate(&reference, &add_estimation_noise(&p.alice, snr, 30_000 + t)?, &th)?);
        verdicts.push(authenticate(&reference, &add_estimation_noise(eve, snr, 40_000 + t)?, &th)?);
    }
    let m = MetricsReport::from_verdicts(&verdicts, snr, th.tau, 11)?;
    println!("P_tl {:.4}  P_ta {:.4}  F1 {:.4}  R_e {:.4}", m.p_tl, m.p_ta, m.f1, m.r_e);
    println!("legitimate rejections {:.4} (target 0.05)", m.p_fa);
    for p in &m.roc {
        println!("  threshold {:>8.4}: accept {:.3} of Alice, {:.3} of Eve", p.threshold, p.tpr, p.fpr);
    }
    Ok(())
}
