//! Distance-threshold authentication and its metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::csi::{ComplexCsi, Identity};
use crate::error::{PlaError, Result};
use crate::predictor::Predictor;
use crate::scenario::DatasetBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Nmse,
    Euclidean,
    Cosine,
}

impl FromStr for DistanceKind {
    type Err = PlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmse" => Ok(Self::Nmse),
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(PlaError::argument("metric", format!("unknown distance {other:?}"))),
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nmse => "nmse",
            Self::Euclidean => "euclidean",
            Self::Cosine => "cosine",
        })
    }
}

/// Whether fingerprints are compared as complex values or by magnitude only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    #[default]
    Complex,
    Magnitude,
}

/// Distance between a candidate `a` and a reference `b`.
///
/// `nmse = |a - b|^2 / |b|^2`, `euclidean = |a - b|`,
/// `cosine = 1 - |<a, b>| / (|a| |b|)`.
pub fn fingerprint_distance(a: &ComplexCsi, b: &ComplexCsi, kind: DistanceKind) -> Result<f64> {
    fingerprint_distance_with(a, b, kind, CompareMode::Complex)
}

pub fn fingerprint_distance_with(
    a: &ComplexCsi,
    b: &ComplexCsi,
    kind: DistanceKind,
    mode: CompareMode,
) -> Result<f64> {
    a.check_same_shape(b)?;
    let (diff, ea, eb, inner) = match mode {
        CompareMode::Complex => {
            let mut diff = 0.0;
            let mut inner = num_complex::Complex64::new(0.0, 0.0);
            for (x, y) in a.values().iter().zip(b.values()) {
                diff += (x - y).norm_sqr();
                inner += x * y.conj();
            }
            (diff, a.energy(), b.energy(), inner.norm())
        }
        CompareMode::Magnitude => {
            let (mut diff, mut ea, mut eb, mut inner) = (0.0, 0.0, 0.0, 0.0);
            for (x, y) in a.values().iter().zip(b.values()) {
                let (mx, my) = (x.norm(), y.norm());
                diff += (mx - my).powi(2);
                ea += mx * mx;
                eb += my * my;
                inner += mx * my;
            }
            (diff, ea, eb, inner)
        }
    };
    match kind {
        DistanceKind::Nmse => {
            if eb == 0.0 {
                return Err(PlaError::Data("nmse reference fingerprint has zero energy".into()));
            }
            Ok(diff / eb)
        }
        DistanceKind::Euclidean => Ok(diff.sqrt()),
        DistanceKind::Cosine => {
            if ea == 0.0 || eb == 0.0 {
                return Err(PlaError::Data("cosine distance of a zero fingerprint".into()));
            }
            Ok((1.0 - inner / (ea.sqrt() * eb.sqrt())).max(0.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_fa: f64,
    pub n_validation: usize,
    /// 1-based nearest rank of the chosen distance among the sorted validation distances.
    pub rank: usize,
    pub quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthThreshold {
    pub metric_kind: DistanceKind,
    #[serde(default)]
    pub compare_mode: CompareMode,
    pub tau: f64,
    pub calibration: Option<Calibration>,
}

impl AuthThreshold {
    pub fn new(metric_kind: DistanceKind, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(PlaError::argument("tau", format!("{tau} must be finite and positive")));
        }
        Ok(Self {
            metric_kind,
            compare_mode: CompareMode::Complex,
            tau,
            calibration: None,
        })
    }

    pub fn with_mode(mut self, mode: CompareMode) -> Self {
        self.compare_mode = mode;
        self
    }
}

/// Nearest-rank `(1 - target_fa)` quantile of legitimate distances.
///
/// A zero quantile (perfect predictions) is raised to the smallest positive
/// normal float so that `tau > 0` holds and exact matches still accept.
pub fn calibrate_from_distances(distances: &[f64], kind: DistanceKind, target_fa: f64) -> Result<AuthThreshold> {
    if !(target_fa > 0.0 && target_fa < 1.0) {
        return Err(PlaError::argument("target_fa", format!("{target_fa} not in (0, 1)")));
    }
    let n = distances.len();
    if (n as f64) * target_fa < 1.0 - 1e-12 {
        return Err(PlaError::argument(
            "validation",
            format!("{n} distances are too few for a {target_fa} false-alarm quantile (need >= {})", (1.0 / target_fa).ceil()),
        ));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(PlaError::Data("distances must be finite and non-negative".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = 1.0 - target_fa;
    let rank = (((q * n as f64) - 1e-9).ceil() as usize).clamp(1, n);
    let tau = sorted[rank - 1].max(f64::MIN_POSITIVE);
    Ok(AuthThreshold {
        metric_kind: kind,
        compare_mode: CompareMode::Complex,
        tau,
        calibration: Some(Calibration {
            target_fa,
            n_validation: n,
            rank,
            quantile: q,
        }),
    })
}

/// Calibrate on the legitimate pairs of a validation bundle: each Alice
/// fingerprint is compared with the prediction from Jack's history. The
/// first `context_len - 1` pairs only serve as history.
pub fn calibrate_threshold(
    predictor: &dyn Predictor,
    val_bundle: &DatasetBundle,
    kind: DistanceKind,
    target_fa: f64,
) -> Result<AuthThreshold> {
    let bundle = val_bundle.clone().sorted();
    let w = predictor.context_len();
    let jack: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.jack.clone()).collect();
    if jack.len() < w {
        return Err(PlaError::Data(format!("validation bundle has {} pairs, predictor needs {w}", jack.len())));
    }
    let histories: Vec<&[ComplexCsi]> = (w - 1..jack.len()).map(|i| &jack[i + 1 - w..=i]).collect();
    let preds = predictor.predict_batch(&histories)?;
    let distances = preds
        .iter()
        .zip(&bundle.pairs[w - 1..])
        .map(|(p, pair)| fingerprint_distance(&pair.alice, p, kind))
        .collect::<Result<Vec<_>>>()?;
    calibrate_from_distances(&distances, kind, target_fa)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Alice,
    Eve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthVerdict {
    pub distance: f64,
    pub accept: bool,
    pub ground_truth: Option<GroundTruth>,
}

impl AuthVerdict {
    pub fn correct(&self) -> Option<bool> {
        self.ground_truth.map(|g| self.accept == (g == GroundTruth::Alice))
    }
}

/// Accept `x_tilde` as Alice iff its distance to the prediction is at most
/// `tau` (ties accept). The ground truth is taken from `x_tilde`'s label.
pub fn authenticate(x_hat: &ComplexCsi, x_tilde: &ComplexCsi, th: &AuthThreshold) -> Result<AuthVerdict> {
    let distance = fingerprint_distance_with(x_tilde, x_hat, th.metric_kind, th.compare_mode)?;
    let ground_truth = match x_tilde.identity {
        Identity::Alice => Some(GroundTruth::Alice),
        Identity::Eve => Some(GroundTruth::Eve),
        _ => None,
    };
    Ok(AuthVerdict {
        distance,
        accept: distance <= th.tau,
        ground_truth,
    })
}

/// `2 p_tl p_ta / (p_tl + p_ta)`, defined as 0 when both are 0.
pub fn compute_f1(p_tl: f64, p_ta: f64) -> Result<f64> {
    for (name, v) in [("p_tl", p_tl), ("p_ta", p_ta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(PlaError::argument(name, format!("{v} not in [0, 1]")));
        }
    }
    if p_tl + p_ta == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p_tl * p_ta / (p_tl + p_ta))
}

/// Fraction of verdicts whose decision disagrees with the ground truth.
pub fn compute_error_rate(verdicts: &[AuthVerdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(PlaError::argument("verdicts", "empty verdict list"));
    }
    let mut wrong = 0usize;
    for (i, v) in verdicts.iter().enumerate() {
        match v.correct() {
            Some(true) => {}
            Some(false) => wrong += 1,
            None => {
                return Err(PlaError::Data(format!("verdict {i} has no ground truth")));
            }
        }
    }
    Ok(wrong as f64 / verdicts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Counts {
    pub n_legit: usize,
    pub n_attack: usize,
    /// legitimate accepted
    pub tp: usize,
    /// legitimate rejected
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// attack accepted
    pub fp: usize,
    /// attack rejected
    pub tn: usize,
}

impl Counts {
    pub fn from_verdicts(verdicts: &[AuthVerdict]) -> Result<Self> {
        let mut c = Counts::default();
        for (i, v) in verdicts.iter().enumerate() {
            match (v.ground_truth, v.accept) {
                (Some(GroundTruth::Alice), true) => c.tp += 1,
                (Some(GroundTruth::Alice), false) => c.fn_ += 1,
                (Some(GroundTruth::Eve), true) => c.fp += 1,
                (Some(GroundTruth::Eve), false) => c.tn += 1,
                (None, _) => return Err(PlaError::Data(format!("verdict {i} has no ground truth"))),
            }
        }
        c.n_legit = c.tp + c.fn_;
        c.n_attack = c.fp + c.tn;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Fraction of legitimate and of attack distances accepted at `threshold`.
pub fn roc_point(legit: &[f64], attack: &[f64], threshold: f64) -> RocPoint {
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
    RocPoint {
        threshold,
        tpr: frac(legit),
        fpr: frac(attack),
    }
}

/// ROC over `n_points` thresholds spaced evenly from the smallest to the
/// largest observed distance, preceded by the reject-all point at
/// threshold -1 (distances are never negative).
pub fn roc_curve(legit: &[f64], attack: &[f64], n_points: usize) -> Result<Vec<RocPoint>> {
    if legit.is_empty() || attack.is_empty() {
        return Err(PlaError::argument("distances", "both legitimate and attack lists must be nonempty"));
    }
    let n_points = n_points.max(2);
    let all = legit.iter().chain(attack);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![roc_point(legit, attack, -1.0)];
    for i in 0..n_points {
        let thr = if i + 1 == n_points {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n_points - 1) as f64
        };
        out.push(roc_point(legit, attack, thr));
    }
    Ok(out)
}

/// Rates, scores and counts for one evaluation cell.
///
/// `p_ta` is the attack-detection rate (rejected attacks over attacks), the
/// reading under which a perfect authenticator scores `f1 = 1`. The literal
/// false-alarm reading (legitimate transmissions rejected, the rate that
/// calibration targets) is kept alongside as `p_fa` and
/// `f1_false_alarm_reading`; `f1_conventional` is precision/recall F1 with
/// legitimate transmissions as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "lenient_f64")]
    pub snr_db: f64,
    pub p_tl: f64,
    pub p_ta: f64,
    pub f1: f64,
    pub p_fa: f64,
    pub f1_false_alarm_reading: f64,
    pub f1_conventional: f64,
    pub r_e: f64,
    pub tau: f64,
    pub counts: Counts,
    pub roc: Vec<RocPoint>,
    pub latency_ms: Option<f64>,
    pub energy_j: Option<f64>,
}

impl MetricsReport {
    pub fn from_verdicts(verdicts: &[AuthVerdict], snr_db: f64, tau: f64, roc_points: usize) -> Result<Self> {
        let counts = Counts::from_verdicts(verdicts)?;
        if counts.n_legit == 0 || counts.n_attack == 0 {
            return Err(PlaError::Data("metrics need both legitimate and attack trials".into()));
        }
        let p_tl = counts.tp as f64 / counts.n_legit as f64;
        let p_ta = counts.tn as f64 / counts.n_attack as f64;
        let p_fa = counts.fn_ as f64 / counts.n_legit as f64;
        let precision = if counts.tp + counts.fp == 0 {
            0.0
        } else {
            counts.tp as f64 / (counts.tp + counts.fp) as f64
        };
        let f1_conventional = compute_f1(precision, p_tl)?;
        let legit: Vec<f64> = verdicts
            .iter()
            .filter(|v| v.ground_truth == Some(GroundTruth::Alice))
            .map(|v| v.distance)
            .collect();
        let attack: Vec<f64> = verdicts
            .iter()
            .filter(|v| v.ground_truth == Some(GroundTruth::Eve))
            .map(|v| v.distance)
            .collect();
        Ok(Self {
            snr_db,
            p_tl,
            p_ta,
            f1: compute_f1(p_tl, p_ta)?,
            p_fa,
            f1_false_alarm_reading: compute_f1(p_tl, p_fa)?,
            f1_conventional,
            r_e: compute_error_rate(verdicts)?,
            tau,
            counts,
            roc: roc_curve(&legit, &attack, roc_points)?,
            latency_ms: None,
            energy_j: None,
        })
    }
}

/// JSON has no infinities; non-finite values travel as strings.
pub(crate) mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
