use crate::csi::{ComplexCsi, Provenance};
use crate::error::{PlaError, Result};

use super::{complex_gaussian, derived_rng};

const STREAM_NOISE: u64 = 0x4e4f_4953;

/// Add complex AWGN so that the per-fingerprint signal-to-noise ratio equals
/// `snr_db`. `f64::INFINITY` passes the values through unchanged but still
/// marks the fingerprint as observed.
pub fn add_estimation_noise(x: &ComplexCsi, snr_db: f64, rng_seed: u64) -> Result<ComplexCsi> {
    if x.snr_db.is_some() {
        return Err(PlaError::State(format!(
            "fingerprint (t={}) already carries estimation noise",
            x.time_index
        )));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(PlaError::argument("snr_db", format!("{snr_db} is not a usable SNR")));
    }
    let signal = x.mean_power();
    if signal == 0.0 {
        return Err(PlaError::Data(
            "signal power is zero; SNR is undefined".into(),
        ));
    }
    let mut y = if snr_db == f64::INFINITY {
        x.clone()
    } else {
        let noise_var = signal / 10f64.powf(snr_db / 10.0);
        let mut rng = derived_rng(rng_seed, STREAM_NOISE, x.time_index);
        let values = x
            .values()
            .iter()
            .map(|v| v + complex_gaussian(&mut rng, noise_var))
            .collect();
        x.with_values(values)?
    };
    y.snr_db = Some(snr_db);
    y.provenance = Provenance::Observed;
    Ok(y)
}

/// Empirical SNR of `noisy` relative to its clean source, in dB.
pub fn measured_snr_db(clean: &ComplexCsi, noisy: &ComplexCsi) -> Result<f64> {
    clean.check_same_shape(noisy)?;
    let noise: f64 = clean
        .values()
        .iter()
        .zip(noisy.values())
        .map(|(a, b)| (b - a).norm_sqr())
        .sum();
    Ok(10.0 * (clean.energy() / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::Identity;
    use crate::scenario::{generate_pair_at, ScenarioConfig};
    use num_complex::Complex64;

    fn big() -> ComplexCsi {
        let cfg = ScenarioConfig {
            n_antennas: 100,
            n_subcarriers: 1000,
            n_paths: 1000,
            ..Default::default()
        };
        generate_pair_at(&cfg, 3).alice
    }

    #[test]
    fn infinite_snr_is_passthrough() {
        let x = big();
        let y = add_estimation_noise(&x, f64::INFINITY, 1).unwrap();
        assert_eq!(x.values(), y.values());
        assert_eq!(y.snr_db, Some(f64::INFINITY));
        assert_eq!(y.identity, x.identity);
        assert_eq!(y.time_index, x.time_index);
    }

    #[test]
    fn measured_snr_matches_request() {
        let x = big();
        for snr in [5.0, 10.0, 15.0, 20.0] {
            let y = add_estimation_noise(&x, snr, 7).unwrap();
            let m = measured_snr_db(&x, &y).unwrap();
            assert!((m - snr).abs() < 0.5, "{snr} -> {m}");
        }
    }

    #[test]
    fn zero_signal_and_double_noise_rejected() {
        let z = ComplexCsi::zeros(2, 2, Identity::Alice);
        assert_eq!(add_estimation_noise(&z, 10.0, 0).unwrap_err().code(), "E_DATA");

        let x = ComplexCsi::new(1, 2, vec![Complex64::new(1.0, 0.0); 2], Identity::Jack, 0).unwrap();
        let y = add_estimation_noise(&x, 10.0, 0).unwrap();
        assert_eq!(add_estimation_noise(&y, 10.0, 0).unwrap_err().code(), "E_STATE");
    }
}
