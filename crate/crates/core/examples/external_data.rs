//! Ingest a grid-style channel export (one matrix per time step and grid
//! user), assign roles to grid positions and split it by time.
//!
//!     cargo run --release --example external_data

use num_complex::Complex64;
use pla_core::harness::{prepare_data, DataSource};
use pla_core::scenario::{generate_pair_at, save_grid_dataset, ExternalMapping, GridDataset, ScenarioConfig};

fn main() -> pla_core::Result<()> {
    // fill a 2x2 grid with simulated users so the example is self-contained
    let cfg = ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 16,
        ..Default::default()
    };
    let n_t = 200u64;
    let mut channels: Vec<Complex64> = Vec::new();
    for t in 0..n_t {
        let pair = generate_pair_at(&cfg, t);
        let other = generate_pair_at(&cfg, t + 100_000);
        for user in [&pair.jack, &pair.alice, &other.jack, &other.alice] {
            channels.extend_from_slice(user.values());
        }
    }
    let grid = GridDataset {
        n_antennas: 4,
        n_subcarriers: 16,
        grid_rows: 2,
        grid_cols: 2,
        time_indices: (0..n_t).collect(),
        channels,
    };
    let path = std::env::temp_dir().join("pla-grid-example.placsi");
    save_grid_dataset(&grid, &path, None)?;

    let mapping = ExternalMapping::from_toml_str(
        r#"
        jack = { row = 0, col = 0 }
        alice = { row = 0, col = 1 }
        eve = 3
        "#,
    )?;
    let source = DataSource::External {
        path: path.clone(),
        mapping,
        fractions: [0.6, 0.1, 0.3],
    };
    let data = prepare_data(&source, 0)?;
    println!(
        "{}: train {} / val {} / test {} pairs, {} attacker samples in test",
        path.display(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.test.eve_samples.len()
    );
    println!("scenario hash {}", data.scenario_hash);
    Ok(())
}
