//! Complex channel fingerprints.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PlaError, Result};

/// Who a fingerprint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Identity {
    Alice,
    Jack,
    Eve,
    /// Jack's fingerprint re-used as the comparison reference (no learning).
    Reference,
}

impl Identity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Identity::Alice => "alice",
            Identity::Jack => "jack",
            Identity::Eve => "eve",
            Identity::Reference => "reference",
        }
    }
}

/// How a fingerprint came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Noiseless ground truth (simulated) or as loaded from a dataset file.
    #[default]
    Truth,
    /// Ground truth plus channel-estimation noise.
    Observed,
    /// Output of a predictor.
    Predicted,
}

/// A complex CSI matrix of shape `n_antennas x n_subcarriers`, row-major by antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexCsi {
    n_antennas: usize,
    n_subcarriers: usize,
    values: Vec<Complex64>,
    pub identity: Identity,
    pub time_index: u64,
    /// `None` for noiseless fingerprints. `Some(f64::INFINITY)` marks a
    /// fingerprint that went through the noise stage with noise disabled.
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ComplexCsi {
    pub fn new(
        n_antennas: usize,
        n_subcarriers: usize,
        values: Vec<Complex64>,
        identity: Identity,
        time_index: u64,
    ) -> Result<Self> {
        if n_antennas == 0 || n_subcarriers == 0 {
            return Err(PlaError::shape(
                "positive dimensions",
                format!("({n_antennas}, {n_subcarriers})"),
            ));
        }
        if values.len() != n_antennas * n_subcarriers {
            return Err(PlaError::shape(
                format!("{} values", n_antennas * n_subcarriers),
                values.len().to_string(),
            ));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(PlaError::Data("fingerprint contains non-finite entries".into()));
        }
        Ok(Self {
            n_antennas,
            n_subcarriers,
            values,
            identity,
            time_index,
            snr_db: None,
            provenance: Provenance::Truth,
        })
    }

    pub fn zeros(n_antennas: usize, n_subcarriers: usize, identity: Identity) -> Self {
        Self {
            n_antennas,
            n_subcarriers,
            values: vec![Complex64::new(0.0, 0.0); n_antennas * n_subcarriers],
            identity,
            time_index: 0,
            snr_db: None,
            provenance: Provenance::Truth,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_antennas, self.n_subcarriers)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.values[antenna * self.n_subcarriers + subcarrier]
    }

    /// Replace the values, keeping labels. Shape and finiteness are checked.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        let mut out = Self::new(
            self.n_antennas,
            self.n_subcarriers,
            values,
            self.identity,
            self.time_index,
        )?;
        out.snr_db = self.snr_db;
        out.provenance = self.provenance;
        Ok(out)
    }

    pub fn relabel(mut self, identity: Identity) -> Self {
        self.identity = identity;
        self
    }

    pub fn transpose(&self) -> Self {
        let (a, k) = self.shape();
        let mut values = Vec::with_capacity(a * k);
        for sc in 0..k {
            for ant in 0..a {
                values.push(self.get(ant, sc));
            }
        }
        Self {
            n_antennas: k,
            n_subcarriers: a,
            values,
            ..self.clone()
        }
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.values.len() as f64
    }

    pub fn check_same_shape(&self, other: &ComplexCsi) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(PlaError::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Pooled complex correlation magnitude between two aligned fingerprint sets,
/// `|sum <a_n, b_n>| / sqrt(sum |a_n|^2 * sum |b_n|^2)` over vectorised matrices.
pub fn empirical_correlation(a: &[ComplexCsi], b: &[ComplexCsi]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(PlaError::argument(
            "samples",
            format!("need two nonempty aligned sets, got {} and {}", a.len(), b.len()),
        ));
    }
    let mut cross = Complex64::new(0.0, 0.0);
    let (mut ea, mut eb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        x.check_same_shape(y)?;
        for (u, v) in x.values().iter().zip(y.values()) {
            cross += u * v.conj();
        }
        ea += x.energy();
        eb += y.energy();
    }
    if ea == 0.0 || eb == 0.0 {
        return Err(PlaError::Data("correlation of an all-zero set".into()));
    }
    Ok(cross.norm() / (ea * eb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        let v = vec![Complex64::new(1.0, 0.0); 5];
        assert!(ComplexCsi::new(2, 3, v, Identity::Alice, 0).is_err());
        let mut v = vec![Complex64::new(1.0, 0.0); 6];
        v[2].im = f64::NAN;
        let err = ComplexCsi::new(2, 3, v, Identity::Alice, 0).unwrap_err();
        assert_eq!(err.code(), "E_DATA");
    }

    #[test]
    fn transpose_swaps_axes() {
        let v: Vec<_> = (0..6).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let x = ComplexCsi::new(2, 3, v, Identity::Jack, 4).unwrap();
        let t = x.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.get(2, 1), x.get(1, 2));
        assert_eq!(t.transpose(), x);
    }

    #[test]
    fn correlation_of_scaled_copy_is_one() {
        let v: Vec<_> = (0..6).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let x = ComplexCsi::new(2, 3, v.clone(), Identity::Alice, 0).unwrap();
        let scaled: Vec<_> = v.iter().map(|c| c * Complex64::new(0.0, -3.0)).collect();
        let y = x.with_values(scaled).unwrap();
        let r = empirical_correlation(&[x], &[y]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }
}
