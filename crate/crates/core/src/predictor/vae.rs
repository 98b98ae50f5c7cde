//! Conditional VAE with cross-attention conditioning on Jack's fingerprint.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{self as nn, Conv2d, GroupNorm, Linear};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{PredictorCheckpoint, PredictorKind, CHECKPOINT_VERSION};
use crate::csi::{ComplexCsi, Identity, Provenance};
use crate::diffusion::seeded_normal;
use crate::error::{PlaError, Result};
use crate::fingerprint::{batchify, denormalize_with, FingerprintImage, NormMode};
use crate::nn::{conv3, downsample, norm, CrossAttention, ResBlock};
use crate::params::ParamStore;
use crate::scenario::{derived_rng, DatasetBundle};
use crate::train::{augment_conditions, epoch_order, scalar, DivergenceGuard, LogEntry, Precision, TrainConfig, Trainer};

use super::{check_shape, history_window, Predictor};

const LATENT_TAG: u64 = 0x4c41_5445;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeSpec {
    pub latent_dim: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub beta_kl: f64,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
}

impl Default for VaeSpec {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            channels: 32,
            patch_size: 2,
            beta_kl: 1.0,
            n_antennas: 8,
            n_subcarriers: 32,
        }
    }
}

impl VaeSpec {
    pub fn for_shape(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self {
            n_antennas,
            n_subcarriers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("n_antennas", self.n_antennas),
            ("n_subcarriers", self.n_subcarriers),
        ] {
            if v == 0 {
                return Err(PlaError::config(name, "must be positive"));
            }
        }
        if self.n_antennas % (2 * self.patch_size) != 0 || self.n_subcarriers % (2 * self.patch_size) != 0 {
            return Err(PlaError::config(
                "patch_size",
                format!("{}x{} not divisible by {}", self.n_antennas, self.n_subcarriers, 2 * self.patch_size),
            ));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return Err(PlaError::config("beta_kl", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn grid(&self) -> (usize, usize) {
        (self.n_antennas / self.patch_size, self.n_subcarriers / self.patch_size)
    }
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dimensions and
/// averaged over the batch.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let per = ((mu.sqr()? + logvar.exp()?)? - logvar)?
        .affine(1.0, -1.0)?
        .sum(D::Minus1)?;
    Ok((per.mean_all()? * 0.5)?)
}

fn fold(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape(vec![b, c, h / p, p, w / p, p])?
        .permute(vec![0, 1, 3, 5, 2, 4])?
        .reshape((b, c * p * p, h / p, w / p))?)
}

fn unfold(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, cpp, hp, wp) = x.dims4()?;
    Ok(x.reshape(vec![b, cpp / (p * p), p, p, hp, wp])?
        .permute(vec![0, 1, 4, 2, 5, 3])?
        .reshape((b, cpp / (p * p), hp * p, wp * p))?)
}

struct Vae {
    spec: VaeSpec,
    // encoder q(z | X_A, X_J)
    enc_in: Conv2d,
    enc_block: ResBlock,
    enc_down: Conv2d,
    enc_head: Linear,
    // condition features for the decoder
    cond_in: Conv2d,
    cond_block: ResBlock,
    // decoder p(X_A | z, X_J)
    dec_proj: Linear,
    dec_block1: ResBlock,
    dec_attn: CrossAttention,
    dec_block2: ResBlock,
    dec_norm: GroupNorm,
    dec_out: Conv2d,
}

impl Vae {
    fn new(spec: &VaeSpec, store: &ParamStore, dtype: DType, device: &Device) -> Result<Self> {
        spec.validate()?;
        let vb = store.var_builder(dtype, device);
        let c = spec.channels;
        let p2 = 2 * spec.patch_size * spec.patch_size;
        let (h, w) = spec.grid();
        Ok(Self {
            spec: spec.clone(),
            enc_in: conv3(2 * p2, c, vb.pp("enc.in"))?,
            enc_block: ResBlock::new(c, c, None, vb.pp("enc.block"))?,
            enc_down: downsample(c, vb.pp("enc.down"))?,
            enc_head: nn::linear(c * (h / 2) * (w / 2), 2 * spec.latent_dim, vb.pp("enc.head"))?,
            cond_in: conv3(p2, c, vb.pp("cond.in"))?,
            cond_block: ResBlock::new(c, c, None, vb.pp("cond.block"))?,
            dec_proj: nn::linear(spec.latent_dim, c * h * w, vb.pp("dec.proj"))?,
            dec_block1: ResBlock::new(2 * c, c, None, vb.pp("dec.block1"))?,
            dec_attn: CrossAttention::new(c, c, vb.pp("dec.attn"))?,
            dec_block2: ResBlock::new(c, c, None, vb.pp("dec.block2"))?,
            dec_norm: norm(c, vb.pp("dec.norm"))?,
            dec_out: conv3(c, p2, vb.pp("dec.out"))?,
        })
    }

    fn condition(&self, x_j: &Tensor) -> Result<Tensor> {
        let h = self.cond_in.forward(&fold(x_j, self.spec.patch_size)?)?;
        self.cond_block.forward(&h, None)
    }

    /// Posterior mean and log-variance, each `[B, latent]`.
    fn encode(&self, x_a: &Tensor, x_j: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = Tensor::cat(&[x_a, x_j], 1)?;
        let h = self.enc_in.forward(&fold(&x, self.spec.patch_size)?)?;
        let h = self.enc_block.forward(&h, None)?;
        let h = self.enc_down.forward(&h.silu()?)?;
        let stats = self.enc_head.forward(&h.flatten_from(1)?)?;
        let l = self.spec.latent_dim;
        Ok((stats.narrow(1, 0, l)?, stats.narrow(1, l, l)?.clamp(-10.0, 10.0)?))
    }

    fn decode(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = cond.dims4()?;
        let zmap = self.dec_proj.forward(z)?.reshape((b, c, h, w))?;
        let x = Tensor::cat(&[&zmap, cond], 1)?;
        let x = self.dec_block1.forward(&x, None)?;
        let x = self.dec_attn.forward(&x, cond)?;
        let x = self.dec_block2.forward(&x, None)?;
        let x = self.dec_out.forward(&self.dec_norm.forward(&x)?.silu()?)?;
        unfold(&x, self.spec.patch_size)
    }
}

/// Train the conditional VAE; the loss is per-element reconstruction MSE
/// plus `beta_kl` times the batch-mean KL term.
pub fn train_vae(
    bundle: &DatasetBundle,
    spec: &VaeSpec,
    norm_mode: NormMode,
    cfg: &TrainConfig,
    device: &Device,
) -> Result<PredictorCheckpoint> {
    if bundle.is_empty() {
        return Err(PlaError::Data("cannot train on an empty bundle".into()));
    }
    cfg.validate()?;
    let (a, k) = bundle.shape().expect("nonempty");
    if (a, k) != (spec.n_antennas, spec.n_subcarriers) {
        return Err(PlaError::shape(
            format!("{}x{}", spec.n_antennas, spec.n_subcarriers),
            format!("{a}x{k} training data"),
        ));
    }
    let store = ParamStore::new(cfg.seed);
    let dtype = cfg.precision.dtype();
    let vae = Vae::new(spec, &store, dtype, device)?;
    let targets: Vec<FingerprintImage> = bundle
        .pairs
        .iter()
        .map(|p| norm_mode.normalize(&p.alice))
        .collect::<Result<_>>()?;
    let jack: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.jack.clone()).collect();
    let n = targets.len();
    let mut trainer = Trainer::new(store.all_vars(), cfg, cfg.total_steps(n))?;
    let mut guard = DivergenceGuard::default();
    let mut log = Vec::new();
    let mut rng = derived_rng(cfg.seed, LATENT_TAG, 0);
    for epoch in 0..cfg.epochs {
        let conds: Vec<FingerprintImage> = augment_conditions(&jack, cfg, epoch)?
            .iter()
            .map(|x| norm_mode.normalize(x))
            .collect::<Result<_>>()?;
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in epoch_order(n, cfg.seed, epoch).chunks(cfg.batch_size) {
            let pick = |imgs: &[FingerprintImage]| -> Result<Tensor> {
                let v: Vec<FingerprintImage> = idx.iter().map(|&i| imgs[i].clone()).collect();
                batchify(&v)?.to_tensor(device, dtype)
            };
            let x_a = pick(&targets)?;
            let x_j = pick(&conds)?;
            let (mu, logvar) = vae.encode(&x_a, &x_j)?;
            let noise = seeded_normal(mu.dims(), rand::Rng::random(&mut rng), 0, device, dtype)?;
            let z = (&mu + (noise * (&logvar * 0.5)?.exp()?)?)?;
            let recon = vae.decode(&z, &vae.condition(&x_j)?)?;
            let loss = (nn::loss::mse(&recon, &x_a)? + (kl_divergence(&mu, &logvar)? * spec.beta_kl)?)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(PlaError::Training(format!("vae loss became {value} at epoch {epoch}")));
            }
            sum += value;
            batches += 1;
            trainer.step(&loss)?;
            if trainer.finished() {
                break;
            }
        }
        let mean = sum / batches as f64;
        log::info!("vae epoch {epoch}: loss {mean:.5}");
        log.push(LogEntry { epoch, loss: mean });
        guard.observe(epoch, mean, &log)?;
        if trainer.finished() {
            break;
        }
    }
    Ok(PredictorCheckpoint {
        version: CHECKPOINT_VERSION,
        kind: PredictorKind::Vae,
        spec: serde_json::to_value(spec)?,
        schedule: None,
        norm_mode,
        seed: cfg.seed,
        precision: cfg.precision,
        training_log: log,
        weights: store.export()?,
    })
}

/// Inference decodes at the prior mean `z = 0`, so predictions are deterministic.
pub struct VaePredictor {
    vae: Vae,
    norm_mode: NormMode,
    precision: Precision,
    device: Device,
    ckpt: PredictorCheckpoint,
}

impl VaePredictor {
    pub fn from_checkpoint(ckpt: &PredictorCheckpoint, device: &Device) -> Result<Self> {
        ckpt.expect_kind(&[PredictorKind::Vae])?;
        let spec: VaeSpec = ckpt.spec_as()?;
        let store = ParamStore::from_weights(ckpt.seed, &ckpt.weights, device)?;
        let vae = Vae::new(&spec, &store, ckpt.precision.dtype(), device)?;
        Ok(Self {
            vae,
            norm_mode: ckpt.norm_mode,
            precision: ckpt.precision,
            device: device.clone(),
            ckpt: ckpt.clone(),
        })
    }

    /// Reconstruction through the full encoder/decoder path, for diagnostics.
    pub fn reconstruct(&self, x_a: &ComplexCsi, x_j: &ComplexCsi) -> Result<ComplexCsi> {
        let ia = self.norm_mode.normalize(x_a)?;
        let ij = self.norm_mode.normalize(x_j)?;
        let dtype = self.precision.dtype();
        let ta = batchify(&[ia.clone()])?.to_tensor(&self.device, dtype)?;
        let tj = batchify(&[ij])?.to_tensor(&self.device, dtype)?;
        let (mu, _) = self.vae.encode(&ta, &tj)?;
        let out = self.vae.decode(&mu, &self.vae.condition(&tj)?)?;
        let planes = out.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let meta = ia.meta.expect("normalised image carries meta");
        let (_, a, k) = ia.shape();
        denormalize_with(&FingerprintImage::from_planes(a, k, planes, Some(meta), ia.labels)?, meta)
    }
}

impl Predictor for VaePredictor {
    fn kind(&self) -> PredictorKind {
        PredictorKind::Vae
    }

    fn predict_batch(&self, histories: &[&[ComplexCsi]]) -> Result<Vec<ComplexCsi>> {
        let spec = &self.vae.spec;
        let mut out = Vec::with_capacity(histories.len());
        for part in histories.chunks(128) {
            let mut imgs = Vec::with_capacity(part.len());
            let mut current = Vec::with_capacity(part.len());
            for h in part {
                let x = &history_window(h, 1)?[0];
                check_shape(x, spec.n_antennas, spec.n_subcarriers)?;
                imgs.push(self.norm_mode.normalize(x)?);
                current.push(x);
            }
            let dtype = self.precision.dtype();
            let cond = batchify(&imgs)?.to_tensor(&self.device, dtype)?;
            let z = Tensor::zeros((part.len(), spec.latent_dim), dtype, &self.device)?;
            let y = self.vae.decode(&z, &self.vae.condition(&cond)?)?;
            let flat = y.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            let per = 2 * spec.n_antennas * spec.n_subcarriers;
            for ((x, img), planes) in current.into_iter().zip(&imgs).zip(flat.chunks_exact(per)) {
                let meta = img.meta.expect("normalised image carries meta");
                let pred = FingerprintImage::from_planes(spec.n_antennas, spec.n_subcarriers, planes.to_vec(), Some(meta), img.labels)?;
                let mut y = denormalize_with(&pred, meta)?;
                y.identity = Identity::Alice;
                y.provenance = Provenance::Predicted;
                y.snr_db = x.snr_db;
                out.push(y);
            }
        }
        Ok(out)
    }

    fn checkpoint(&self) -> Result<PredictorCheckpoint> {
        Ok(self.ckpt.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_pair_sequence, ScenarioConfig};

    #[test]
    fn kl_is_zero_at_the_prior() {
        let dev = Device::Cpu;
        let mu = Tensor::zeros((4, 6), DType::F64, &dev).unwrap();
        let kl = kl_divergence(&mu, &mu).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(kl, 0.0);
        // one dimension with mu = 1, var = 1: 0.5 * 1 averaged over a batch of 1
        let mu = Tensor::new(&[[1.0f64, 0.0]], &dev).unwrap();
        let lv = Tensor::zeros((1, 2), DType::F64, &dev).unwrap();
        assert!((kl_divergence(&mu, &lv).unwrap().to_scalar::<f64>().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_autoencoder_overfits_one_batch() {
        let cfg = ScenarioConfig {
            n_antennas: 4,
            n_subcarriers: 8,
            n_paths: 4,
            n_samples_train: 8,
            n_samples_val: 1,
            n_samples_test: 1,
            ..Default::default()
        };
        let s = generate_pair_sequence(&cfg).unwrap();
        let spec = VaeSpec {
            latent_dim: 16,
            channels: 16,
            beta_kl: 0.0,
            ..VaeSpec::for_shape(4, 8)
        };
        let tc = TrainConfig {
            epochs: 600,
            batch_size: 8,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let ckpt = train_vae(&s.train, &spec, NormMode::PerSample, &tc, &Device::Cpu).unwrap();
        let last = ckpt.training_log.last().unwrap().loss;
        assert!(last < 0.01, "final reconstruction loss {last}");
        let p = VaePredictor::from_checkpoint(&ckpt, &Device::Cpu).unwrap();
        let j = [s.train.pairs[0].jack.clone()];
        assert_eq!(p.predict(&j).unwrap(), p.predict(&j).unwrap());
    }
}
