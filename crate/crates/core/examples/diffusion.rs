//! Train a small conditional diffusion predictor and sample Alice's
//! fingerprint from Jack's with a few DDIM step counts.
//!
//!     cargo run --release --example diffusion

use candle_core::Device;
use pla_core::auth::{fingerprint_distance, DistanceKind};
use pla_core::csi::ComplexCsi;
use pla_core::diffusion::{train_gdm, DdimConfig, DenoiserSpec, GdmPredictor, GdmSpec, ScheduleConfig};
use pla_core::fingerprint::{NormMode, NormalizationMeta};
use pla_core::scenario::{generate_pair_sequence, ScenarioConfig};
use pla_core::train::TrainConfig;

fn main() -> pla_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        rho_aj: 0.95,
        relative_phase_rad: std::f64::consts::FRAC_PI_2,
        n_samples_train: 2000,
        n_samples_val: 100,
        n_samples_test: 200,
        ..Default::default()
    };
    let data = generate_pair_sequence(&cfg)?;
    let spec = GdmSpec {
        denoiser: DenoiserSpec {
            max_channels: 16,
            time_dim: 16,
            n_antennas: 4,
            n_subcarriers: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let tc = TrainConfig {
        epochs: 40,
        ..Default::default()
    };
    let dev = Device::Cpu;
    let ckpt = train_gdm(&data.train, &spec, &ScheduleConfig::default(), NormMode::PerSample, &tc, &dev)?;

    let jack: Vec<&ComplexCsi> = data.test.pairs.iter().map(|p| &p.jack).collect();
    let nmse = |pred: &[ComplexCsi]| -> pla_core::Result<f64> {
        let mut sum = 0.0;
        for (x, p) in pred.iter().zip(&data.test.pairs) {
            sum += fingerprint_distance(x, &p.alice, DistanceKind::Nmse)?;
        }
        Ok(sum / pred.len() as f64)
    };
    let direct: Vec<ComplexCsi> = jack.iter().map(|x| (*x).clone()).collect();
    println!("Jack as-is: NMSE {:.4}", nmse(&direct)?);
    // Alice keeps an innovation of variance 1 - rho^2 that Jack cannot see: the
    // conditional mean sits at that floor, a posterior sample at twice it
    let floor = 1.0 - cfg.rho_aj * cfg.rho_aj;
    println!("floors: conditional mean {floor:.4}, posterior sample {:.4}", 2.0 * floor);
    for steps in [5, 20, 50] {
        let base = GdmPredictor::from_checkpoint(&ckpt, &dev)?;
        let sampler = DdimConfig { steps, ..*base.sampler() };
        let p = base.with_sampler(sampler);
        let pred = p.predict_with_metas(&jack, None)?;
        // Alice's own scale is unknown at run time; this shows the cost of using Jack's
        let oracle: Vec<NormalizationMeta> =
            data.test.pairs.iter().map(|q| NormalizationMeta::fit(q.alice.values())).collect::<Result<_, _>>()?;
        let with_oracle = p.predict_with_metas(&jack, Some(&oracle))?;
        println!("{steps:>2} DDIM steps: NMSE {:.4}, with Alice's scale {:.4}", nmse(&pred)?, nmse(&with_oracle)?);
    }
    Ok(())
}
