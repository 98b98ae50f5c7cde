//! Train the comparison schemes on one scenario and compare their
//! prediction error against Jack's raw fingerprint.
//!
//!     cargo run --release --example baselines

use candle_core::Device;
use pla_core::auth::{fingerprint_distance, DistanceKind};
use pla_core::checkpoint::PredictorKind;
use pla_core::csi::ComplexCsi;
use pla_core::fingerprint::NormMode;
use pla_core::predictor::{load_predictor, train_recurrent, train_vae, DirectPredictor, Predictor, RecurrentSpec, VaeSpec};
use pla_core::scenario::{generate_pair_sequence, ScenarioConfig};
use pla_core::train::TrainConfig;

fn main() -> pla_core::Result<()> {
    let cfg = ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        rho_aj: 0.95,
        relative_phase_rad: std::f64::consts::FRAC_PI_2,
        n_samples_train: 2000,
        n_samples_val: 50,
        n_samples_test: 300,
        ..Default::default()
    };
    let data = generate_pair_sequence(&cfg)?;
    let dev = Device::Cpu;
    let tc = TrainConfig {
        epochs: 15,
        learning_rate: 2e-3,
        ..Default::default()
    };
    let vae = VaeSpec {
        latent_dim: 16,
        channels: 16,
        ..VaeSpec::for_shape(4, 8)
    };
    let rnn = RecurrentSpec::for_shape(4, 8);

    let mut schemes: Vec<Box<dyn Predictor>> = vec![Box::new(DirectPredictor)];
    schemes.push(load_predictor(&train_vae(&data.train, &vae, NormMode::PerSample, &tc, &dev)?, &dev)?);
    for kind in [PredictorKind::Lstm, PredictorKind::Gru] {
        schemes.push(load_predictor(&train_recurrent(&data.train, kind, &rnn, NormMode::PerSample, &tc, &dev)?, &dev)?);
    }

    // test histories continue from the end of the validation split
    let mut seq: Vec<ComplexCsi> = data.val.pairs.iter().map(|p| p.jack.clone()).collect();
    seq.extend(data.test.pairs.iter().map(|p| p.jack.clone()));
    let offset = data.val.len();
    for p in &schemes {
        let w = p.context_len();
        let hist: Vec<&[ComplexCsi]> = (0..data.test.len()).map(|i| &seq[offset + i + 1 - w..=offset + i]).collect();
        let pred = p.predict_batch(&hist)?;
        let mut sum = 0.0;
        for (x, pair) in pred.iter().zip(&data.test.pairs) {
            sum += fingerprint_distance(x, &pair.alice, DistanceKind::Nmse)?;
        }
        println!("{:<6} window {w}: NMSE {:.4}", p.kind(), sum / pred.len() as f64);
    }
    Ok(())
}
