//! Latency, energy and operation-count estimates for the diffusion predictor.
//!
//!     cargo run --release --example cost -- 525

use candle_core::Device;
use pla_core::auth::{AuthThreshold, DistanceKind};
use pla_core::checkpoint::PredictorKind;
use pla_core::diffusion::GdmSpec;
use pla_core::harness::{
    build_predictor, estimate_complexity, estimate_energy, measure_latency, prepare_data, scheme_config,
    train_scheme, ComplexityParams, DataSource, ExperimentPlan, ObservedCell,
};

fn main() -> pla_core::Result<()> {
    let watts: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(525.0);
    let mut plan = ExperimentPlan::default();
    if let DataSource::Synthetic(cfg) = &mut plan.data {
        cfg.n_samples_train = 64;
        cfg.n_samples_val = 8;
        cfg.n_samples_test = 8;
    }
    plan.train.gdm.epochs = 1;
    let data = prepare_data(&plan.data, 0)?;
    let cfg = scheme_config(&plan, PredictorKind::Gdm, &data, 0)?;
    let ckpt = train_scheme(&cfg, &data.train, &Device::Cpu)?;
    let cell = ObservedCell::new(&data, 1, 20.0, 0, None)?;
    let th = AuthThreshold::new(DistanceKind::Nmse, 0.5)?;
    let spec: GdmSpec = ckpt.spec_as()?;

    println!("steps  median ms  IQR ms   energy J   operations");
    for steps in [1, 5, 10, 20, 50] {
        let p = build_predictor(&ckpt, steps, &Device::Cpu)?;
        let lat = measure_latency(p.as_ref(), cell.histories(1, false)[0], &cell.alice_test[0], &th, 2, 10)?;
        let energy = estimate_energy(watts, lat.median_ms / 1e3)?;
        let ops = estimate_complexity(&ComplexityParams::for_denoiser(&spec.denoiser, steps, 1)?)?;
        println!("{steps:>5}  {:>9.2}  {:>6.2}  {energy:>9.3}   {ops}", lat.median_ms, lat.iqr_ms());
    }
    // the operation count is exact at any size
    let huge = ComplexityParams::new(1000, 4096, 8, 4, 1024, 1 << 16)?;
    println!("T=1000 B=4096 L=8 N=4 C=1024 S=65536: {}", estimate_complexity(&huge)?);
    Ok(())
}
