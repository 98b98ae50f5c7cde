//! Sequence-to-one LSTM/GRU regressors over flattened fingerprint planes.

use candle_core::{Device, Module, Tensor};
use candle_nn::{self as nn, GRUConfig, LSTMConfig, Linear, RNN};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{PredictorCheckpoint, PredictorKind, CHECKPOINT_VERSION};
use crate::csi::{ComplexCsi, Identity, Provenance};
use crate::error::{PlaError, Result};
use crate::fingerprint::{denormalize_with, FingerprintImage, NormMode};
use crate::params::ParamStore;
use crate::scenario::DatasetBundle;
use crate::train::{augment_conditions, epoch_order, scalar, DivergenceGuard, LogEntry, Precision, TrainConfig, Trainer};

use super::{check_shape, history_window, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentSpec {
    /// Jack observations per prediction, ending with the current one.
    pub window: usize,
    pub hidden: usize,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
}

impl Default for RecurrentSpec {
    fn default() -> Self {
        Self {
            window: 8,
            hidden: 64,
            n_antennas: 8,
            n_subcarriers: 32,
        }
    }
}

impl RecurrentSpec {
    pub fn for_shape(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self {
            n_antennas,
            n_subcarriers,
            ..Self::default()
        }
    }

    fn features(&self) -> usize {
        2 * self.n_antennas * self.n_subcarriers
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("window", self.window),
            ("hidden", self.hidden),
            ("n_antennas", self.n_antennas),
            ("n_subcarriers", self.n_subcarriers),
        ] {
            if v == 0 {
                return Err(PlaError::config(name, "must be positive"));
            }
        }
        Ok(())
    }
}

enum Cell {
    Lstm(nn::LSTM),
    Gru(nn::GRU),
}

struct Net {
    cell: Cell,
    head: Linear,
}

impl Net {
    fn new(kind: PredictorKind, spec: &RecurrentSpec, store: &ParamStore, precision: Precision, device: &Device) -> Result<Self> {
        let vb = store.var_builder(precision.dtype(), device);
        let f = spec.features();
        let cell = match kind {
            PredictorKind::Lstm => Cell::Lstm(nn::lstm(f, spec.hidden, LSTMConfig::default(), vb.pp("lstm"))?),
            PredictorKind::Gru => Cell::Gru(nn::gru(f, spec.hidden, GRUConfig::default(), vb.pp("gru"))?),
            other => {
                return Err(PlaError::argument(
                    "kind",
                    format!("{other} is not a recurrent kind; expected lstm or gru"),
                ))
            }
        };
        let head = nn::linear(spec.hidden, f, vb.pp("head"))?;
        Ok(Self { cell, head })
    }

    /// `[B, W, F]` sequences to `[B, F]` predictions.
    fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        let h = match &self.cell {
            Cell::Lstm(c) => c.seq(seq)?.last().expect("window >= 1").h().clone(),
            Cell::Gru(c) => c.seq(seq)?.last().expect("window >= 1").h().clone(),
        };
        Ok(self.head.forward(&h)?)
    }
}

fn flat_planes(imgs: &[FingerprintImage]) -> Vec<f64> {
    imgs.iter().flat_map(|i| i.planes().iter().copied()).collect()
}

/// Train an LSTM or GRU to map Jack's last `window` observations to Alice's
/// current fingerprint. The first `window - 1` pairs of the bundle only
/// serve as history.
pub fn train_recurrent(
    bundle: &DatasetBundle,
    kind: PredictorKind,
    spec: &RecurrentSpec,
    norm_mode: NormMode,
    cfg: &TrainConfig,
    device: &Device,
) -> Result<PredictorCheckpoint> {
    if !matches!(kind, PredictorKind::Lstm | PredictorKind::Gru) {
        return Err(PlaError::argument("kind", format!("{kind} is not lstm or gru")));
    }
    spec.validate()?;
    cfg.validate()?;
    if bundle.len() < spec.window {
        return Err(PlaError::Data(format!(
            "sequence of {} samples is shorter than the window {}",
            bundle.len(),
            spec.window
        )));
    }
    let bundle = bundle.clone().sorted();
    let (a, k) = bundle.shape().expect("nonempty");
    if (a, k) != (spec.n_antennas, spec.n_subcarriers) {
        return Err(PlaError::shape(
            format!("{}x{}", spec.n_antennas, spec.n_subcarriers),
            format!("{a}x{k} training data"),
        ));
    }
    let store = ParamStore::new(cfg.seed);
    let net = Net::new(kind, spec, &store, cfg.precision, device)?;
    let w = spec.window;
    let f = spec.features();
    let jack: Vec<ComplexCsi> = bundle.pairs.iter().map(|p| p.jack.clone()).collect();
    let targets: Vec<f64> = flat_planes(
        &bundle
            .pairs
            .iter()
            .map(|p| norm_mode.normalize(&p.alice))
            .collect::<Result<Vec<_>>>()?,
    );
    let n = bundle.len() - (w - 1);
    let mut trainer = Trainer::new(store.all_vars(), cfg, cfg.total_steps(n))?;
    let mut guard = DivergenceGuard::default();
    let mut log = Vec::new();
    let dtype = cfg.precision.dtype();
    for epoch in 0..cfg.epochs {
        let inputs = flat_planes(
            &augment_conditions(&jack, cfg, epoch)?
                .iter()
                .map(|x| norm_mode.normalize(x))
                .collect::<Result<Vec<_>>>()?,
        );
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in epoch_order(n, cfg.seed, epoch).chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(idx.len() * w * f);
            let mut ys = Vec::with_capacity(idx.len() * f);
            for &i in idx {
                // item i predicts pair i + w - 1 from pairs i..i + w
                xs.extend_from_slice(&inputs[i * f..(i + w) * f]);
                ys.extend_from_slice(&targets[(i + w - 1) * f..(i + w) * f]);
            }
            let x = Tensor::from_vec(xs, (idx.len(), w, f), device)?.to_dtype(dtype)?;
            let y = Tensor::from_vec(ys, (idx.len(), f), device)?.to_dtype(dtype)?;
            let loss = nn::loss::mse(&net.forward(&x)?, &y)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(PlaError::Training(format!("{kind} loss became {value} at epoch {epoch}")));
            }
            sum += value;
            batches += 1;
            trainer.step(&loss)?;
            if trainer.finished() {
                break;
            }
        }
        let mean = sum / batches as f64;
        log::info!("{kind} epoch {epoch}: loss {mean:.5}");
        log.push(LogEntry { epoch, loss: mean });
        guard.observe(epoch, mean, &log)?;
        if trainer.finished() {
            break;
        }
    }
    Ok(PredictorCheckpoint {
        version: CHECKPOINT_VERSION,
        kind,
        spec: serde_json::to_value(spec)?,
        schedule: None,
        norm_mode,
        seed: cfg.seed,
        precision: cfg.precision,
        training_log: log,
        weights: store.export()?,
    })
}

pub struct RecurrentPredictor {
    kind: PredictorKind,
    spec: RecurrentSpec,
    net: Net,
    norm_mode: NormMode,
    precision: Precision,
    device: Device,
    ckpt: PredictorCheckpoint,
}

impl RecurrentPredictor {
    pub fn from_checkpoint(ckpt: &PredictorCheckpoint, device: &Device) -> Result<Self> {
        ckpt.expect_kind(&[PredictorKind::Lstm, PredictorKind::Gru])?;
        let spec: RecurrentSpec = ckpt.spec_as()?;
        let store = ParamStore::from_weights(ckpt.seed, &ckpt.weights, device)?;
        let net = Net::new(ckpt.kind, &spec, &store, ckpt.precision, device)?;
        Ok(Self {
            kind: ckpt.kind,
            spec,
            net,
            norm_mode: ckpt.norm_mode,
            precision: ckpt.precision,
            device: device.clone(),
            ckpt: ckpt.clone(),
        })
    }
}

impl Predictor for RecurrentPredictor {
    fn kind(&self) -> PredictorKind {
        self.kind
    }

    fn context_len(&self) -> usize {
        self.spec.window
    }

    fn predict_batch(&self, histories: &[&[ComplexCsi]]) -> Result<Vec<ComplexCsi>> {
        let (w, f) = (self.spec.window, self.spec.features());
        let mut out = Vec::with_capacity(histories.len());
        for part in histories.chunks(256) {
            let mut xs = Vec::with_capacity(part.len() * w * f);
            let mut current = Vec::with_capacity(part.len());
            for h in part {
                let win = history_window(h, w)?;
                for x in win {
                    check_shape(x, self.spec.n_antennas, self.spec.n_subcarriers)?;
                }
                let imgs = win.iter().map(|x| self.norm_mode.normalize(x)).collect::<Result<Vec<_>>>()?;
                xs.extend(flat_planes(&imgs));
                current.push((win[w - 1].clone(), imgs[w - 1].clone()));
            }
            let x = Tensor::from_vec(xs, (part.len(), w, f), &self.device)?.to_dtype(self.precision.dtype())?;
            let y = self.net.forward(&x)?.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            for ((xj, img), planes) in current.into_iter().zip(y.chunks_exact(f)) {
                let meta = img.meta.expect("normalised image carries meta");
                let pred = FingerprintImage::from_planes(self.spec.n_antennas, self.spec.n_subcarriers, planes.to_vec(), Some(meta), img.labels)?;
                let mut y = denormalize_with(&pred, meta)?;
                y.identity = Identity::Alice;
                y.provenance = Provenance::Predicted;
                y.snr_db = xj.snr_db;
                out.push(y);
            }
        }
        Ok(out)
    }

    fn checkpoint(&self) -> Result<PredictorCheckpoint> {
        Ok(self.ckpt.clone())
    }
}
