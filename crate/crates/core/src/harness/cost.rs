//! Latency, energy and complexity accounting.

use std::time::Instant;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::auth::{authenticate, AuthThreshold};
use crate::csi::ComplexCsi;
use crate::diffusion::DenoiserSpec;
use crate::error::{PlaError, Result};
use crate::predictor::Predictor;

/// Wall-clock statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub n_trials: usize,
}

impl LatencyStats {
    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }

    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(PlaError::argument("samples", "no latency samples"));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            median_ms: quantile(&s, 0.5),
            q1_ms: quantile(&s, 0.25),
            q3_ms: quantile(&s, 0.75),
            n_trials: s.len(),
        })
    }
}

// linear interpolation between order statistics
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Time one end-to-end prediction plus authentication decision.
pub fn measure_latency(
    predictor: &dyn Predictor,
    history: &[ComplexCsi],
    observed: &ComplexCsi,
    threshold: &AuthThreshold,
    n_warmup: usize,
    n_trials: usize,
) -> Result<LatencyStats> {
    if n_trials < 3 {
        return Err(PlaError::argument("n_trials", format!("{n_trials} < 3")));
    }
    let run = || -> Result<()> {
        let x_hat = predictor.predict(history)?;
        authenticate(&x_hat, observed, threshold)?;
        Ok(())
    };
    for _ in 0..n_warmup {
        run()?;
    }
    let mut samples = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let t0 = Instant::now();
        run()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&samples)
}

/// Energy in joules from a configured power draw and a latency.
pub fn estimate_energy(power_watts: f64, latency_s: f64) -> Result<f64> {
    for (name, v) in [("power_watts", power_watts), ("latency_s", latency_s)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(PlaError::argument(name, format!("{v} must be positive and finite")));
        }
    }
    Ok(power_watts * latency_s)
}

/// Inputs of the dual-branch denoiser operation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityParams {
    /// sampling steps
    pub t: u64,
    /// batch size
    pub b: u64,
    /// levels
    pub l: u64,
    /// blocks per level
    pub n: u64,
    /// largest channel count
    pub c: u64,
    /// largest spatial token count
    pub s: u64,
}

impl ComplexityParams {
    pub fn new(t: u64, b: u64, l: u64, n: u64, c: u64, s: u64) -> Result<Self> {
        let p = Self { t, b, l, n, c, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("T", self.t),
            ("B", self.b),
            ("L", self.l),
            ("N", self.n),
            ("C", self.c),
            ("S", self.s),
        ] {
            if v == 0 {
                return Err(PlaError::argument(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Parameters for one prediction with `spec` and `steps` sampling steps.
    /// `S` is the token count at the top level, after patch folding.
    pub fn for_denoiser(spec: &DenoiserSpec, steps: usize, batch: usize) -> Result<Self> {
        let p = spec.patch_size;
        let tokens = (spec.n_antennas / p) * (spec.n_subcarriers / p);
        Self::new(
            steps as u64,
            batch as u64,
            spec.n_layers as u64,
            spec.blocks_per_layer as u64,
            spec.max_channels as u64,
            tokens as u64,
        )
    }
}

/// `T B L N (2 C^2 S + 4 S^2 C)` evaluated exactly.
pub fn estimate_complexity(p: &ComplexityParams) -> Result<BigUint> {
    p.validate()?;
    let big = BigUint::from;
    let (c, s) = (big(p.c), big(p.s));
    let per_block = big(2u64) * &c * &c * &s + big(4u64) * &s * &s * &c;
    Ok(big(p.t) * big(p.b) * big(p.l) * big(p.n) * per_block)
}
