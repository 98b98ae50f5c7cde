//! Two-plane image representation of complex fingerprints.
//!
//! The real and imaginary planes share one scale factor, the larger of their
//! two dynamic ranges, so the relative phase of every entry is preserved.
//! Each plane is centred on its own midpoint, which places both planes inside
//! `[-1, 1]` with the wider one spanning it exactly.

use candle_core::{DType, Device, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csi::{ComplexCsi, Identity, Provenance};
use crate::error::{PlaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    pub range_common: f64,
    pub mid_real: f64,
    pub mid_imag: f64,
    pub degenerate: bool,
}

impl NormalizationMeta {
    /// Fit over any collection of complex values.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a Complex64>) -> Result<Self> {
        let mut lo = Complex64::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Complex64::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for v in values {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(PlaError::Data("cannot normalize non-finite entries".into()));
            }
            lo.re = lo.re.min(v.re);
            lo.im = lo.im.min(v.im);
            hi.re = hi.re.max(v.re);
            hi.im = hi.im.max(v.im);
            any = true;
        }
        if !any {
            return Err(PlaError::Data("cannot normalize an empty fingerprint".into()));
        }
        let range = (hi.re - lo.re).max(hi.im - lo.im);
        let degenerate = range <= 0.0;
        Ok(Self {
            range_common: if degenerate { 1.0 } else { range },
            mid_real: (hi.re + lo.re) / 2.0,
            mid_imag: (hi.im + lo.im) / 2.0,
            degenerate,
        })
    }

    pub fn fit_dataset(items: &[ComplexCsi]) -> Result<Self> {
        Self::fit(items.iter().flat_map(|x| x.values()))
    }

    #[inline]
    fn forward(&self, v: Complex64) -> (f64, f64) {
        let s = 2.0 / self.range_common;
        ((v.re - self.mid_real) * s, (v.im - self.mid_imag) * s)
    }

    #[inline]
    fn inverse(&self, re: f64, im: f64) -> Complex64 {
        let s = self.range_common / 2.0;
        Complex64::new(self.mid_real + re * s, self.mid_imag + im * s)
    }
}

/// Per-fingerprint statistics (default) or one set of statistics fitted on
/// the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    PerSample,
    PerDataset { meta: NormalizationMeta },
}

impl NormMode {
    pub fn normalize(&self, x: &ComplexCsi) -> Result<FingerprintImage> {
        match self {
            NormMode::PerSample => normalize(x),
            NormMode::PerDataset { meta } => normalize_with(x, *meta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormMode::PerSample => "per_sample",
            NormMode::PerDataset { .. } => "per_dataset",
        }
    }
}

/// Labels carried through from the source fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageLabels {
    pub identity: Identity,
    pub time_index: u64,
    pub snr_db: Option<f64>,
    pub provenance: Provenance,
}

impl From<&ComplexCsi> for ImageLabels {
    fn from(x: &ComplexCsi) -> Self {
        Self {
            identity: x.identity,
            time_index: x.time_index,
            snr_db: x.snr_db,
            provenance: x.provenance,
        }
    }
}

/// Planes laid out `[2][n_antennas][n_subcarriers]`, real part first.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintImage {
    n_antennas: usize,
    n_subcarriers: usize,
    planes: Vec<f64>,
    pub meta: Option<NormalizationMeta>,
    pub labels: ImageLabels,
}

impl FingerprintImage {
    pub fn from_planes(
        n_antennas: usize,
        n_subcarriers: usize,
        planes: Vec<f64>,
        meta: Option<NormalizationMeta>,
        labels: ImageLabels,
    ) -> Result<Self> {
        if planes.len() != 2 * n_antennas * n_subcarriers {
            return Err(PlaError::shape(
                format!("2x{n_antennas}x{n_subcarriers} planes"),
                format!("{} values", planes.len()),
            ));
        }
        Ok(Self {
            n_antennas,
            n_subcarriers,
            planes,
            meta,
            labels,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (2, self.n_antennas, self.n_subcarriers)
    }

    pub fn planes(&self) -> &[f64] {
        &self.planes
    }

    pub fn real_plane(&self) -> &[f64] {
        &self.planes[..self.planes.len() / 2]
    }

    pub fn imag_plane(&self) -> &[f64] {
        &self.planes[self.planes.len() / 2..]
    }

    pub fn max_abs(&self) -> f64 {
        self.planes.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Normalize with the fingerprint's own statistics.
pub fn normalize(x: &ComplexCsi) -> Result<FingerprintImage> {
    let meta = NormalizationMeta::fit(x.values())?;
    let mut img = normalize_with(x, meta)?;
    // the extreme entries map to +-1 up to rounding; keep them inside the box
    for v in &mut img.planes {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(img)
}

/// Normalize with externally supplied statistics.
pub fn normalize_with(x: &ComplexCsi, meta: NormalizationMeta) -> Result<FingerprintImage> {
    let n = x.values().len();
    let mut planes = vec![0.0; 2 * n];
    for (i, v) in x.values().iter().enumerate() {
        let (re, im) = meta.forward(*v);
        planes[i] = re;
        planes[n + i] = im;
    }
    let (a, k) = x.shape();
    FingerprintImage::from_planes(a, k, planes, Some(meta), ImageLabels::from(x))
}

pub fn denormalize(img: &FingerprintImage) -> Result<ComplexCsi> {
    let meta = img
        .meta
        .ok_or_else(|| PlaError::State("image has no normalization metadata".into()))?;
    denormalize_with(img, meta)
}

/// Invert with explicitly chosen statistics (e.g. the condition's).
pub fn denormalize_with(img: &FingerprintImage, meta: NormalizationMeta) -> Result<ComplexCsi> {
    let n = img.n_antennas * img.n_subcarriers;
    let values = (0..n)
        .map(|i| meta.inverse(img.planes[i], img.planes[n + i]))
        .collect();
    let mut x = ComplexCsi::new(
        img.n_antennas,
        img.n_subcarriers,
        values,
        img.labels.identity,
        img.labels.time_index,
    )?;
    x.snr_db = img.labels.snr_db;
    x.provenance = img.labels.provenance;
    Ok(x)
}

/// Images stacked as `[B, 2, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub data: Vec<f64>,
    pub metas: Vec<Option<NormalizationMeta>>,
    pub labels: Vec<ImageLabels>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.len(), 2, self.n_antennas, self.n_subcarriers)
    }

    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, self.dims(), device)?.to_dtype(dtype)?)
    }
}

pub fn batchify(items: &[FingerprintImage]) -> Result<ImageBatch> {
    let first = items
        .first()
        .ok_or_else(|| PlaError::argument("items", "cannot batch an empty list"))?;
    let (_, a, k) = first.shape();
    let mut data = Vec::with_capacity(items.len() * 2 * a * k);
    for it in items {
        if it.shape() != first.shape() {
            return Err(PlaError::shape(
                format!("{:?}", first.shape()),
                format!("{:?}", it.shape()),
            ));
        }
        data.extend_from_slice(&it.planes);
    }
    Ok(ImageBatch {
        n_antennas: a,
        n_subcarriers: k,
        data,
        metas: items.iter().map(|i| i.meta).collect(),
        labels: items.iter().map(|i| i.labels).collect(),
    })
}

pub fn unbatchify(batch: &ImageBatch) -> Result<Vec<FingerprintImage>> {
    let per = 2 * batch.n_antennas * batch.n_subcarriers;
    if batch.data.len() != per * batch.len() {
        return Err(PlaError::shape(
            format!("{} values", per * batch.len()),
            batch.data.len().to_string(),
        ));
    }
    batch
        .data
        .chunks_exact(per)
        .zip(batch.metas.iter().zip(&batch.labels))
        .map(|(chunk, (meta, labels))| {
            FingerprintImage::from_planes(
                batch.n_antennas,
                batch.n_subcarriers,
                chunk.to_vec(),
                *meta,
                *labels,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csi(a: usize, k: usize, v: Vec<Complex64>) -> ComplexCsi {
        ComplexCsi::new(a, k, v, Identity::Alice, 0).unwrap()
    }

    #[test]
    fn hand_evaluated_mapping() {
        let x = csi(
            1,
            2,
            vec![Complex64::new(-3.0, -1.0), Complex64::new(1.0, 1.0)],
        );
        let img = normalize(&x).unwrap();
        let m = img.meta.unwrap();
        assert_eq!((m.range_common, m.mid_real, m.mid_imag), (4.0, -1.0, 0.0));
        assert_eq!(img.real_plane(), &[-1.0, 1.0]);
        assert_eq!(img.imag_plane(), &[-0.5, 0.5]);
    }

    #[test]
    fn symmetric_ranges_scale_by_half() {
        let x = csi(
            1,
            2,
            vec![Complex64::new(-2.0, -1.0), Complex64::new(2.0, 1.0)],
        );
        let img = normalize(&x).unwrap();
        assert_eq!(img.real_plane()[1], 1.0);
        assert_eq!(img.imag_plane()[1], 0.5);
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = csi(2, 2, vec![Complex64::new(2.0, 0.0); 4]);
        let img = normalize(&x).unwrap();
        let m = img.meta.unwrap();
        assert!(m.degenerate);
        assert_eq!(m.range_common, 1.0);
        assert!(img.planes().iter().all(|&v| v == 0.0));
        assert_eq!(denormalize(&img).unwrap().values(), x.values());
    }

    #[test]
    fn zero_image_inverts_to_midpoint() {
        let meta = NormalizationMeta {
            range_common: 4.0,
            mid_real: -1.0,
            mid_imag: 0.0,
            degenerate: false,
        };
        let labels = ImageLabels::from(&csi(1, 1, vec![Complex64::new(0.0, 0.0)]));
        let img = FingerprintImage::from_planes(2, 3, vec![0.0; 12], Some(meta), labels).unwrap();
        let x = denormalize(&img).unwrap();
        assert!(x.values().iter().all(|v| *v == Complex64::new(-1.0, 0.0)));
    }

    #[test]
    fn missing_meta_and_nan_are_errors() {
        let labels = ImageLabels::from(&csi(1, 1, vec![Complex64::new(0.0, 0.0)]));
        let img = FingerprintImage::from_planes(1, 1, vec![0.0; 2], None, labels).unwrap();
        assert_eq!(denormalize(&img).unwrap_err().code(), "E_STATE");
        assert!(NormalizationMeta::fit([Complex64::new(f64::NAN, 0.0)].iter()).is_err());
    }

    #[test]
    fn batch_shapes_and_errors() {
        let mk = |a, k| normalize(&csi(a, k, (0..a * k).map(|i| Complex64::new(i as f64, 1.0)).collect())).unwrap();
        let items = vec![mk(4, 8), mk(4, 8), mk(4, 8)];
        let b = batchify(&items).unwrap();
        assert_eq!(b.dims(), (3, 2, 4, 8));
        assert_eq!(unbatchify(&b).unwrap(), items);
        assert!(batchify(&[]).is_err());
        assert_eq!(batchify(&[mk(4, 8), mk(2, 8)]).unwrap_err().code(), "E_SHAPE");
    }

    fn matrix() -> impl Strategy<Value = (usize, usize, Vec<(f64, f64)>, f64)> {
        (1usize..6, 1usize..9, -3.0f64..3.0).prop_flat_map(|(a, k, log_scale)| {
            (
                Just(a),
                Just(k),
                prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), a * k),
                Just(10f64.powf(log_scale)),
            )
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_bounds((a, k, raw, scale) in matrix()) {
            let v: Vec<_> = raw.iter().map(|(r, i)| Complex64::new(r * scale, i * scale)).collect();
            let x = csi(a, k, v);
            let img = normalize(&x).unwrap();
            let m = img.meta.unwrap();
            prop_assert!(img.max_abs() <= 1.0);
            if !m.degenerate {
                prop_assert!((img.max_abs() - 1.0).abs() < 1e-12);
            }
            let back = denormalize(&img).unwrap();
            let peak = x.values().iter().fold(0.0f64, |p, v| p.max(v.norm()));
            for (u, w) in x.values().iter().zip(back.values()) {
                prop_assert!((u - w).norm() <= 1e-6 * peak.max(f64::MIN_POSITIVE));
            }
        }

        #[test]
        fn layout_invariant((a, k, raw, scale) in matrix()) {
            let v: Vec<_> = raw.iter().map(|(r, i)| Complex64::new(r * scale, i * scale)).collect();
            let x = csi(a, k, v);
            let direct = normalize(&x.transpose()).unwrap();
            let img = normalize(&x).unwrap();
            let back = denormalize_with(&img, NormalizationMeta { range_common: 2.0, mid_real: 0.0, mid_imag: 0.0, degenerate: false }).unwrap();
            let via = normalize_with(&back.transpose(), NormalizationMeta { range_common: 2.0, mid_real: 0.0, mid_imag: 0.0, degenerate: false }).unwrap();
            for (p, q) in direct.planes().iter().zip(via.planes()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
