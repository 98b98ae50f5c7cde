//! Run a miniature sweep over all schemes and two SNRs, then rebuild the
//! report from the persisted verdicts.
//!
//!     cargo run --release --example sweep -- /tmp/pla-sweep

use std::path::PathBuf;

use candle_core::Device;
use pla_core::harness::{metrics_csv, regenerate_report, run_sweep, DataSource, ExperimentPlan};
use pla_core::scenario::ScenarioConfig;

fn main() -> pla_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pla-sweep"));
    let mut plan = ExperimentPlan::default();
    plan.data = DataSource::Synthetic(ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        relative_phase_rad: std::f64::consts::FRAC_PI_2,
        n_samples_train: 2000,
        n_samples_val: 200,
        n_samples_test: 300,
        ..Default::default()
    });
    plan.snr_db_list = vec![5.0, 20.0];
    plan.target_fa = 0.05;
    plan.output_dir = out.clone();
    plan.gdm.denoiser.max_channels = 16;
    plan.gdm.denoiser.time_dim = 16;
    plan.vae.latent_dim = 16;
    for t in [&mut plan.train.gdm, &mut plan.train.vae, &mut plan.train.recurrent] {
        t.epochs = 5;
    }
    // the denoiser needs a few thousand optimiser steps before it beats the baselines
    plan.train.gdm.epochs = 25;
    println!("{}", plan.to_toml()?);

    let rows = run_sweep(&plan, &Device::Cpu)?;
    print!("{}", metrics_csv(&rows)?);
    // a second pass reuses the checkpoints and only re-reads the raw verdicts
    let again = regenerate_report(&out)?;
    println!("regenerated {} rows, identical: {}", again.len(), again == rows);
    println!("report in {}", out.display());
    Ok(())
}
