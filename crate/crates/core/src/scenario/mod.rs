//! Synthetic Alice/Jack/Eve channel scenarios and external dataset ingestion.
//!
//! Channels are frequency-domain CSI built from `n_paths` complex Gaussian
//! taps per antenna. Jack's taps are the shared scattering component `s`;
//! Alice's are `rho_aj * e^{j phi} * s + sqrt(1 - rho_aj^2) * u` with an
//! independent innovation `u`, where `phi` is a fixed relative carrier phase
//! between the two stationary devices. Eve is drawn against Alice with
//! correlation `rho_ae`. Every sample's randomness is derived from
//! `(rng_seed, time_index)`, so generation order does not matter.

mod bundle;
mod container;
mod noise;

pub use bundle::{split_dataset, BundleSource, DatasetBundle, Pair, Split, SplitOptions};
pub use container::{
    load_bundle, load_external_dataset, save_bundle, save_grid_dataset, ExternalMapping,
    GridDataset, UserRef,
};
pub use noise::{add_estimation_noise, measured_snr_db};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::csi::{ComplexCsi, Identity};
use crate::error::{PlaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub n_paths: usize,
    pub rho_aj: f64,
    pub rho_ae: f64,
    /// Fixed carrier-phase offset of Alice relative to Jack, in radians.
    pub relative_phase_rad: f64,
    pub snr_db_list: Vec<f64>,
    pub n_samples_train: usize,
    pub n_samples_val: usize,
    pub n_samples_test: usize,
    pub rng_seed: u64,
    pub drift_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_antennas: 8,
            n_subcarriers: 32,
            n_paths: 16,
            rho_aj: 0.95,
            rho_ae: 0.0,
            relative_phase_rad: 0.0,
            snr_db_list: vec![5.0, 10.0, 15.0, 20.0],
            n_samples_train: 4000,
            n_samples_val: 500,
            n_samples_test: 2000,
            rng_seed: 0,
            drift_rate: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_antennas", self.n_antennas),
            ("n_subcarriers", self.n_subcarriers),
            ("n_paths", self.n_paths),
            ("n_samples_train", self.n_samples_train),
            ("n_samples_val", self.n_samples_val),
            ("n_samples_test", self.n_samples_test),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(PlaError::config(field, "must be strictly positive"));
            }
        }
        for (field, v) in [("rho_aj", self.rho_aj), ("rho_ae", self.rho_ae)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PlaError::config(field, format!("{v} not in [0, 1]")));
            }
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return Err(PlaError::config("drift_rate", "must be finite and >= 0"));
        }
        if !self.relative_phase_rad.is_finite() {
            return Err(PlaError::config("relative_phase_rad", "must be finite"));
        }
        if self.snr_db_list.iter().any(|s| s.is_nan()) {
            return Err(PlaError::config("snr_db_list", "contains NaN"));
        }
        if self.rho_aj <= self.rho_ae {
            log::warn!(
                "rho_aj ({}) <= rho_ae ({}): the attacker is at least as correlated with \
                 Alice as the collaborator",
                self.rho_aj,
                self.rho_ae
            );
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.n_samples_train + self.n_samples_val + self.n_samples_test
    }
}

/// Train/val/test bundles produced by [`generate_pair_sequence`].
#[derive(Debug, Clone)]
pub struct ScenarioSplits {
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
}

// Independent random streams per role.
const STREAM_SHARED: u64 = 0x5348_4152;
const STREAM_ALICE: u64 = 0x414c_4943;
const STREAM_DRIFT: u64 = 0x4452_4946;
const STREAM_EVE: u64 = 0x4556_4500;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for one `(seed, tag, index)` triple.
pub(crate) fn derived_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

pub(crate) fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

fn draw_taps(cfg: &ScenarioConfig, tag: u64, t: u64) -> Vec<Complex64> {
    let mut rng = derived_rng(cfg.rng_seed, tag, t);
    let var = 1.0 / cfg.n_paths as f64;
    (0..cfg.n_antennas * cfg.n_paths)
        .map(|_| complex_gaussian(&mut rng, var))
        .collect()
}

struct TapSet {
    jack: Vec<Complex64>,
    alice: Vec<Complex64>,
}

fn pair_taps(cfg: &ScenarioConfig, t: u64) -> TapSet {
    let shared = draw_taps(cfg, STREAM_SHARED, t);
    let innovation = draw_taps(cfg, STREAM_ALICE, t);
    let rotation = Complex64::from_polar(cfg.rho_aj, cfg.relative_phase_rad);
    let spread = (1.0 - cfg.rho_aj * cfg.rho_aj).max(0.0).sqrt();
    let mut alice: Vec<Complex64> = shared
        .iter()
        .zip(&innovation)
        .map(|(s, u)| rotation * s + u * spread)
        .collect();
    if cfg.drift_rate > 0.0 {
        let drift = draw_taps(cfg, STREAM_DRIFT, t);
        let scale = 1.0 / (1.0 + cfg.drift_rate * cfg.drift_rate).sqrt();
        for (g, v) in alice.iter_mut().zip(&drift) {
            *g = (*g + v * cfg.drift_rate) * scale;
        }
    }
    TapSet {
        jack: shared,
        alice,
    }
}

/// Per-antenna DFT of the tap vector onto the subcarrier grid.
fn taps_to_csi(cfg: &ScenarioConfig, taps: &[Complex64], identity: Identity, t: u64) -> ComplexCsi {
    let (n_ant, n_sc, n_paths) = (cfg.n_antennas, cfg.n_subcarriers, cfg.n_paths);
    let mut values = vec![Complex64::new(0.0, 0.0); n_ant * n_sc];
    for k in 0..n_sc {
        for p in 0..n_paths {
            let phase = -2.0 * PI * (k * p) as f64 / n_sc as f64;
            let w = Complex64::from_polar(1.0, phase);
            for a in 0..n_ant {
                values[a * n_sc + k] += taps[a * n_paths + p] * w;
            }
        }
    }
    ComplexCsi::new(n_ant, n_sc, values, identity, t).expect("generated CSI is finite")
}

/// Noiseless (jack, alice) pair at one time index.
pub fn generate_pair_at(cfg: &ScenarioConfig, t: u64) -> Pair {
    let taps = pair_taps(cfg, t);
    Pair {
        jack: taps_to_csi(cfg, &taps.jack, Identity::Jack, t),
        alice: taps_to_csi(cfg, &taps.alice, Identity::Alice, t),
    }
}

/// Eve's noiseless fingerprint at one time index, correlated with Alice's by `rho_ae`.
pub fn generate_eve_at(cfg: &ScenarioConfig, t: u64) -> ComplexCsi {
    let alice = pair_taps(cfg, t).alice;
    let own = draw_taps(cfg, STREAM_EVE, t);
    let spread = (1.0 - cfg.rho_ae * cfg.rho_ae).max(0.0).sqrt();
    let taps: Vec<Complex64> = alice
        .iter()
        .zip(&own)
        .map(|(a, w)| a * cfg.rho_ae + w * spread)
        .collect();
    taps_to_csi(cfg, &taps, Identity::Eve, t)
}

fn bundle_for_range(cfg: &ScenarioConfig, split: Split, start: u64, len: usize) -> DatasetBundle {
    let times = start..start + len as u64;
    DatasetBundle {
        pairs: times.clone().map(|t| generate_pair_at(cfg, t)).collect(),
        eve_samples: times.map(|t| generate_eve_at(cfg, t)).collect(),
        split,
        source: BundleSource::Synthetic(cfg.clone()),
    }
}

/// Generate contiguous train/val/test bundles of noiseless pairs, with Eve
/// samples aligned to the same time indices.
pub fn generate_pair_sequence(cfg: &ScenarioConfig) -> Result<ScenarioSplits> {
    cfg.validate()?;
    let n_tr = cfg.n_samples_train;
    let n_va = cfg.n_samples_val;
    Ok(ScenarioSplits {
        train: bundle_for_range(cfg, Split::Train, 0, n_tr),
        val: bundle_for_range(cfg, Split::Val, n_tr as u64, n_va),
        test: bundle_for_range(cfg, Split::Test, (n_tr + n_va) as u64, cfg.n_samples_test),
    })
}

/// `n` Eve fingerprints at time indices `0..n`.
pub fn generate_eve_samples(cfg: &ScenarioConfig, n: usize) -> Result<Vec<ComplexCsi>> {
    cfg.validate()?;
    if n == 0 {
        return Err(PlaError::argument("n", "must be positive"));
    }
    Ok((0..n as u64).map(|t| generate_eve_at(cfg, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::empirical_correlation;

    fn small(rho: f64, n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_antennas: 4,
            n_subcarriers: 8,
            n_paths: 4,
            rho_aj: rho,
            n_samples_train: n,
            n_samples_val: 1,
            n_samples_test: 1,
            ..Default::default()
        }
    }

    fn aj_correlation(cfg: &ScenarioConfig) -> f64 {
        let s = generate_pair_sequence(cfg).unwrap();
        let (j, a): (Vec<_>, Vec<_>) = s.train.pairs.into_iter().map(|p| (p.jack, p.alice)).unzip();
        empirical_correlation(&a, &j).unwrap()
    }

    #[test]
    fn perfect_correlation_is_identity() {
        let s = generate_pair_sequence(&small(1.0, 50)).unwrap();
        for p in &s.train.pairs {
            assert_eq!(p.alice.values(), p.jack.values());
            assert_eq!(p.alice.time_index, p.jack.time_index);
        }
    }

    #[test]
    fn zero_correlation_is_uncorrelated() {
        let r = aj_correlation(&small(0.0, 10_000));
        assert!(r < 0.05, "{r}");
    }

    #[test]
    fn correlation_tracks_rho_regardless_of_phase() {
        let mut cfg = small(0.9, 10_000);
        cfg.relative_phase_rad = 1.3;
        let r = aj_correlation(&cfg);
        assert!((0.87..=0.93).contains(&r), "{r}");
    }

    #[test]
    fn eve_defaults_independent_and_degenerates_at_one() {
        let mut cfg = small(0.9, 10_000);
        let eve = generate_eve_samples(&cfg, 10_000).unwrap();
        let alice: Vec<_> = (0..10_000).map(|t| generate_pair_at(&cfg, t).alice).collect();
        assert!(empirical_correlation(&eve, &alice).unwrap() < 0.05);

        cfg.rho_ae = 1.0;
        let eve = generate_eve_samples(&cfg, 3).unwrap();
        for e in eve {
            assert_eq!(e.identity, Identity::Eve);
            assert_eq!(e.values(), generate_pair_at(&cfg, e.time_index).alice.values());
        }
    }

    #[test]
    fn single_eve_sample_has_scenario_shape() {
        let cfg = small(0.5, 4);
        let eve = generate_eve_samples(&cfg, 1).unwrap();
        assert_eq!(eve.len(), 1);
        assert_eq!(eve[0].shape(), (4, 8));
        assert!(generate_eve_samples(&cfg, 0).is_err());
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = small(0.5, 4);
        cfg.rho_aj = 1.5;
        match generate_pair_sequence(&cfg).unwrap_err() {
            PlaError::Config { field, .. } => assert_eq!(field, "rho_aj"),
            e => panic!("{e}"),
        }
        cfg.rho_aj = 0.5;
        cfg.n_paths = 0;
        match generate_pair_sequence(&cfg).unwrap_err() {
            PlaError::Config { field, .. } => assert_eq!(field, "n_paths"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn generation_is_order_independent() {
        let cfg = small(0.7, 20);
        let s = generate_pair_sequence(&cfg).unwrap();
        let again = generate_pair_at(&cfg, 13);
        assert_eq!(s.train.pairs[13], again);
        let s2 = generate_pair_sequence(&cfg).unwrap();
        assert_eq!(s.test.pairs, s2.test.pairs);
        assert_eq!(s.val.pairs[0].jack.time_index, 20);
    }

    #[test]
    fn unit_average_element_power() {
        let cfg = small(0.6, 2000);
        let s = generate_pair_sequence(&cfg).unwrap();
        let p: f64 = s.train.pairs.iter().map(|p| p.alice.mean_power()).sum::<f64>() / 2000.0;
        assert!((p - 1.0).abs() < 0.05, "{p}");
    }
}
