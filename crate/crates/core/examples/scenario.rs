//! Simulate the Alice/Jack/Eve scenario, check the channel correlations and
//! round-trip a bundle through the on-disk container.
//!
//!     cargo run --release --example scenario

use pla_core::csi::{empirical_correlation, ComplexCsi};
use pla_core::scenario::{
    add_estimation_noise, generate_pair_sequence, load_bundle, measured_snr_db, save_bundle, ScenarioConfig,
};

fn main() -> pla_core::Result<()> {
    let cfg = ScenarioConfig {
        rho_aj: 0.9,
        rho_ae: 0.3,
        n_samples_train: 2000,
        n_samples_val: 200,
        n_samples_test: 500,
        ..Default::default()
    };
    let splits = generate_pair_sequence(&cfg)?;
    let train = &splits.train;
    let (a, k) = train.shape().expect("nonempty");
    println!("train {} / val {} / test {} pairs of {a}x{k}", train.len(), splits.val.len(), splits.test.len());

    let jack: Vec<ComplexCsi> = train.pairs.iter().map(|p| p.jack.clone()).collect();
    let alice: Vec<ComplexCsi> = train.pairs.iter().map(|p| p.alice.clone()).collect();
    println!("rho(Alice, Jack) = {:.3} (configured {})", empirical_correlation(&alice, &jack)?, cfg.rho_aj);
    let eve = &splits.test.eve_samples;
    let alice_test: Vec<ComplexCsi> = splits.test.pairs.iter().map(|p| p.alice.clone()).collect();
    println!("rho(Alice, Eve)  = {:.3} (configured {})", empirical_correlation(&alice_test, eve)?, cfg.rho_ae);

    // one 8x32 draw scatters by a few tenths of a dB, so average over samples
    for snr in [5.0, 20.0] {
        let mut sum = 0.0;
        for (i, h) in alice.iter().take(500).enumerate() {
            sum += measured_snr_db(h, &add_estimation_noise(h, snr, i as u64)?)?;
        }
        println!("target {snr} dB, mean measured over 500 samples {:.2} dB", sum / 500.0);
    }

    let dir = std::env::temp_dir().join("pla-scenario-example");
    let path = dir.join("train.placsi");
    save_bundle(train, &path)?;
    let back = load_bundle(&path)?;
    println!("reloaded {} pairs from {}, identical: {}", back.len(), path.display(), back == *train);
    Ok(())
}
