//! Training and inference for the conditional diffusion predictor.

use candle_core::{Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{PredictorCheckpoint, PredictorKind, CHECKPOINT_VERSION};
use crate::csi::{ComplexCsi, Identity, Provenance};
use crate::error::{PlaError, Result};
use crate::fingerprint::{batchify, denormalize_with, FingerprintImage, NormMode, NormalizationMeta};
use crate::params::ParamStore;
use crate::predictor::{check_shape, history_window, Predictor};
use crate::scenario::{derived_rng, DatasetBundle};
use crate::train::{augment_conditions, epoch_order, scalar, DivergenceGuard, LogEntry, Precision, TrainConfig, Trainer};

use super::denoiser::{CondFeatures, Denoiser, DenoiserSpec};
use super::sampler::{ddim_sample, forward_diffuse, seeded_normal, DdimConfig};
use super::schedule::{DiffusionSchedule, ScheduleConfig};

const STEP_TAG: u64 = 0x5354_4550;
const INIT_NOISE_TAG: u64 = 0x494e_4954;

/// Everything needed to rebuild a trained diffusion predictor besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdmSpec {
    pub denoiser: DenoiserSpec,
    /// Sampler used at prediction time. Normalised fingerprints lie in
    /// `[-1, 1]`, so the clean-sample estimate is clipped there by default
    /// (the bound is in normalised units).
    pub sampler: DdimConfig,
    /// Images per forward pass at inference.
    pub inference_batch: Option<usize>,
    /// Factor applied to normalised images before diffusion so that the
    /// training targets have unit variance. Fitted at training time when unset.
    pub data_scale: Option<f64>,
}

impl Default for GdmSpec {
    fn default() -> Self {
        Self {
            denoiser: DenoiserSpec::default(),
            sampler: DdimConfig {
                clip_x0: Some(1.0),
                ..DdimConfig::default()
            },
            inference_batch: None,
            data_scale: None,
        }
    }
}

/// Mean squared error between `eps` and the denoiser's prediction for
/// explicitly given steps and noise.
pub fn loss_with(
    model: &Denoiser,
    x0: &Tensor,
    cond: &Tensor,
    t: &[usize],
    eps: &Tensor,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    let x_t = forward_diffuse(x0, t, eps, sched)?;
    let feats = model.encode_condition(cond)?;
    let pred = model.forward(&x_t, t, &feats)?;
    Ok(candle_nn::loss::mse(&pred, eps)?)
}

/// One stochastic loss evaluation: steps uniform in `[1, T]` and standard
/// Gaussian noise, both drawn from `rng`.
pub fn loss_step(
    model: &Denoiser,
    x0: &Tensor,
    cond: &Tensor,
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let b = x0.dim(0)?;
    if cond.dims() != x0.dims() {
        return Err(PlaError::shape(format!("{:?}", x0.dims()), format!("{:?}", cond.dims())));
    }
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=sched.t_train())).collect();
    let eps = seeded_normal(x0.dims(), rng.random(), 0, x0.device(), x0.dtype())?;
    let loss = loss_with(model, x0, cond, &t, &eps, sched)?;
    let value = scalar(&loss)?;
    if !value.is_finite() {
        let stats = |x: &Tensor| -> Result<String> {
            let v = x.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Ok(format!("mean {mean:.3e}, max|.| {max:.3e}"))
        };
        return Err(PlaError::Training(format!(
            "non-finite loss {value}; schedule {:?} T={}, steps {:?}, x0 {}, cond {}",
            sched.config.kind,
            sched.t_train(),
            t,
            stats(x0)?,
            stats(cond)?
        )));
    }
    Ok(loss)
}

fn images(items: &[ComplexCsi], mode: &NormMode) -> Result<Vec<FingerprintImage>> {
    items.iter().map(|x| mode.normalize(x)).collect()
}

fn batch_tensor(imgs: &[FingerprintImage], idx: &[usize], device: &Device, precision: Precision) -> Result<Tensor> {
    let picked: Vec<FingerprintImage> = idx.iter().map(|&i| imgs[i].clone()).collect();
    batchify(&picked)?.to_tensor(device, precision.dtype())
}

/// Train the denoiser on `(X_J, X_A)` pairs and return its checkpoint.
pub fn train_gdm(
    bundle: &DatasetBundle,
    spec: &GdmSpec,
    schedule: &ScheduleConfig,
    norm_mode: NormMode,
    cfg: &TrainConfig,
    device: &Device,
) -> Result<PredictorCheckpoint> {
    if bundle.is_empty() {
        return Err(PlaError::Data("cannot train on an empty bundle".into()));
    }
    cfg.validate()?;
    let (a, k) = bundle.shape().expect("nonempty bundle has a shape");
    if (a, k) != (spec.denoiser.n_antennas, spec.denoiser.n_subcarriers) {
        return Err(PlaError::shape(
            format!("{}x{}", spec.denoiser.n_antennas, spec.denoiser.n_subcarriers),
            format!("{a}x{k} training data"),
        ));
    }
    let sched = schedule.build()?;
    let store = ParamStore::new(cfg.seed);
    let model = Denoiser::new(&spec.denoiser, store.clone(), cfg.precision.dtype(), device)?;

    let alice: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.alice.clone()).collect();
    let jack: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.jack.clone()).collect();
    let targets = images(&alice, &norm_mode)?;
    let n = targets.len();
    let scale = match spec.data_scale {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(PlaError::config("data_scale", format!("{s} must be positive"))),
        None => {
            let count = targets.iter().map(|t| t.planes().len()).sum::<usize>() as f64;
            let mean = targets.iter().flat_map(|t| t.planes()).sum::<f64>() / count;
            let var = targets.iter().flat_map(|t| t.planes()).map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 }
        }
    };
    let mut spec = spec.clone();
    spec.data_scale = Some(scale);

    let mut trainer = Trainer::new(store.all_vars(), cfg, cfg.total_steps(n))?;
    let mut rng = derived_rng(cfg.seed, STEP_TAG, 0);
    let mut guard = DivergenceGuard::default();
    let mut log = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        let conds = images(&augment_conditions(&jack, cfg, epoch)?, &norm_mode)?;
        let order = epoch_order(n, cfg.seed, epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let x0 = (batch_tensor(&targets, idx, device, cfg.precision)? * scale)?;
            let c = (batch_tensor(&conds, idx, device, cfg.precision)? * scale)?;
            let loss = loss_step(&model, &x0, &c, &sched, &mut rng)?;
            sum += scalar(&loss)?;
            batches += 1;
            trainer.step(&loss)?;
            if trainer.finished() {
                break;
            }
        }
        let mean = sum / batches as f64;
        log::info!("gdm epoch {epoch}: loss {mean:.5}");
        log.push(LogEntry { epoch, loss: mean });
        guard.observe(epoch, mean, &log)?;
        if trainer.finished() {
            break 'epochs;
        }
    }

    Ok(PredictorCheckpoint {
        version: CHECKPOINT_VERSION,
        kind: PredictorKind::Gdm,
        spec: serde_json::to_value(&spec)?,
        schedule: Some(*schedule),
        norm_mode,
        seed: cfg.seed,
        precision: cfg.precision,
        training_log: log,
        weights: store.export()?,
    })
}

/// A loaded diffusion predictor. Immutable; safe to share across threads.
#[derive(Debug)]
pub struct GdmPredictor {
    model: Denoiser,
    spec: GdmSpec,
    sched: DiffusionSchedule,
    norm_mode: NormMode,
    seed: u64,
    ckpt: PredictorCheckpoint,
}

impl GdmPredictor {
    pub fn from_checkpoint(ckpt: &PredictorCheckpoint, device: &Device) -> Result<Self> {
        ckpt.expect_kind(&[PredictorKind::Gdm])?;
        let spec: GdmSpec = ckpt.spec_as()?;
        let sched = ckpt
            .schedule
            .ok_or_else(|| PlaError::Format {
                path: "<checkpoint>".into(),
                reason: "diffusion checkpoint without schedule".into(),
            })?
            .build()?;
        let store = ParamStore::from_weights(ckpt.seed, &ckpt.weights, device)?;
        let model = Denoiser::new(&spec.denoiser, store, ckpt.precision.dtype(), device)?;
        Ok(Self {
            model,
            spec,
            sched,
            norm_mode: ckpt.norm_mode,
            seed: ckpt.seed,
            ckpt: ckpt.clone(),
        })
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.model
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    pub fn sampler(&self) -> &DdimConfig {
        &self.spec.sampler
    }

    /// Same model with a different sampler setting.
    pub fn with_sampler(mut self, sampler: DdimConfig) -> Self {
        self.spec.sampler = sampler;
        self
    }

    fn scale(&self) -> f64 {
        self.spec.data_scale.unwrap_or(1.0)
    }

    /// Mean noise-prediction loss over `bundle`, with steps and noise drawn
    /// from `seed` so that different bundles can be compared on equal terms.
    pub fn mean_loss(&self, bundle: &DatasetBundle, seed: u64) -> Result<f64> {
        if bundle.is_empty() {
            return Err(PlaError::Data("cannot evaluate on an empty bundle".into()));
        }
        let s = self.scale();
        let alice: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.alice.clone()).collect();
        let jack: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.jack.clone()).collect();
        let targets = images(&alice, &self.norm_mode)?;
        let conds = images(&jack, &self.norm_mode)?;
        let precision = Precision::of(self.model.dtype());
        let mut rng = derived_rng(seed, STEP_TAG, 1);
        let (mut sum, mut count) = (0.0, 0usize);
        let all: Vec<usize> = (0..targets.len()).collect();
        for idx in all.chunks(64) {
            let x0 = (batch_tensor(&targets, idx, self.model.device(), precision)? * s)?;
            let c = (batch_tensor(&conds, idx, self.model.device(), precision)? * s)?;
            sum += scalar(&loss_step(&self.model, &x0, &c, &self.sched, &mut rng)?)? * idx.len() as f64;
            count += idx.len();
        }
        Ok(sum / count as f64)
    }

    /// Normalised samples for a batch of normalised condition images,
    /// starting from per-item noise keyed by `streams`.
    pub fn sample_images(&self, cond: &Tensor, streams: &[u64]) -> Result<Tensor> {
        let s = self.scale();
        let cond = (cond * s)?;
        let (b, c, h, w) = cond.dims4()?;
        let device = self.model.device();
        let dtype = self.model.dtype();
        let init: Vec<Tensor> = streams
            .iter()
            .map(|&s| seeded_normal(&[1, c, h, w], self.seed ^ INIT_NOISE_TAG, s, device, dtype))
            .collect::<Result<_>>()?;
        if init.len() != b {
            return Err(PlaError::shape(format!("{b} noise streams"), init.len().to_string()));
        }
        let x_init = Tensor::cat(&init, 0)?;
        let feats: CondFeatures = self.model.encode_condition(&cond)?;
        let mut sampler = self.spec.sampler;
        sampler.clip_x0 = sampler.clip_x0.map(|c| c * s);
        let x = ddim_sample(&self.model, &feats, x_init, &self.sched, &sampler, self.seed)?;
        Ok((x / s)?)
    }

    /// Predict with an explicit denormalisation meta per item instead of the
    /// condition's own (e.g. Alice's true statistics, for ablations).
    pub fn predict_with_metas(&self, x_j: &[&ComplexCsi], metas: Option<&[NormalizationMeta]>) -> Result<Vec<ComplexCsi>> {
        let d = &self.spec.denoiser;
        let chunk = self.spec.inference_batch.unwrap_or(64).max(1);
        let mut out = Vec::with_capacity(x_j.len());
        for (ci, part) in x_j.chunks(chunk).enumerate() {
            let mut imgs = Vec::with_capacity(part.len());
            for x in part {
                check_shape(x, d.n_antennas, d.n_subcarriers)?;
                imgs.push(self.norm_mode.normalize(x)?);
            }
            let cond = batchify(&imgs)?.to_tensor(self.model.device(), self.model.dtype())?;
            let streams: Vec<u64> = part.iter().map(|x| x.time_index).collect();
            let sampled = self.sample_images(&cond, &streams)?;
            let flat = sampled.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            let per = 2 * d.n_antennas * d.n_subcarriers;
            for (i, (x, planes)) in part.iter().zip(flat.chunks_exact(per)).enumerate() {
                let meta = match metas {
                    Some(m) => m[ci * chunk + i],
                    None => imgs[i].meta.expect("normalised image carries meta"),
                };
                let img = FingerprintImage::from_planes(d.n_antennas, d.n_subcarriers, planes.to_vec(), Some(meta), imgs[i].labels)?;
                let mut y = denormalize_with(&img, meta)?;
                y.identity = Identity::Alice;
                y.provenance = Provenance::Predicted;
                y.snr_db = x.snr_db;
                out.push(y);
            }
        }
        Ok(out)
    }
}

/// Predict Alice's fingerprint from one Jack observation.
pub fn predict_fingerprint(predictor: &GdmPredictor, x_j: &ComplexCsi) -> Result<ComplexCsi> {
    Ok(predictor.predict_with_metas(&[x_j], None)?.remove(0))
}

impl Predictor for GdmPredictor {
    fn kind(&self) -> PredictorKind {
        PredictorKind::Gdm
    }

    fn predict_batch(&self, histories: &[&[ComplexCsi]]) -> Result<Vec<ComplexCsi>> {
        let current: Vec<&ComplexCsi> = histories
            .iter()
            .map(|h| history_window(h, 1).map(|w| &w[0]))
            .collect::<Result<_>>()?;
        self.predict_with_metas(&current, None)
    }

    fn checkpoint(&self) -> Result<PredictorCheckpoint> {
        let mut ckpt = self.ckpt.clone();
        ckpt.spec = serde_json::to_value(&self.spec)?;
        Ok(ckpt)
    }
}
