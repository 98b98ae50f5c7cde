//! Deterministic parameter storage for candle models.
//!
//! candle's CPU random initialisers draw from an unseeded thread RNG, so
//! models are built through [`ParamStore`] instead: every parameter is
//! initialised from a stream keyed by `(seed, parameter name)`, which makes
//! the initial weights independent of construction order and of the process.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use base64::Engine;
use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::NormalOrUniform;
use candle_nn::{Init, VarBuilder};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PlaError, Result};
use crate::scenario::derived_rng;

#[derive(Default)]
struct Inner {
    vars: BTreeMap<String, Var>,
    preset: BTreeMap<String, Tensor>,
}

/// Shared, seeded parameter map.
#[derive(Clone)]
pub struct ParamStore {
    seed: u64,
    inner: Arc<Mutex<Inner>>,
}

fn name_tag(name: &str) -> u64 {
    let h = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Arc::new(Mutex::new(Inner::default())),
        }
    }

    /// A store whose parameters are taken from `weights` instead of initialised.
    pub fn from_weights(seed: u64, weights: &[NamedTensor], device: &Device) -> Result<Self> {
        let store = Self::new(seed);
        {
            let mut inner = store.inner.lock().unwrap();
            for w in weights {
                inner.preset.insert(w.name.clone(), w.to_tensor(device)?);
            }
        }
        Ok(store)
    }

    pub fn var_builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), dtype, device.clone())
    }

    /// Trainable variables in name order.
    pub fn all_vars(&self) -> Vec<Var> {
        self.inner.lock().unwrap().vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().unwrap();
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.all_vars().iter().map(|v| v.elem_count()).sum()
    }

    pub fn export(&self) -> Result<Vec<NamedTensor>> {
        self.named_vars()
            .into_iter()
            .map(|(name, v)| NamedTensor::from_tensor(name, v.as_tensor()))
            .collect()
    }

    fn init_tensor(&self, shape: &Shape, name: &str, init: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let n = shape.elem_count();
        let mut rng = derived_rng(self.seed, name_tag(name), 0);
        let data: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Uniform { lo, up } => (0..n).map(|_| rng.random_range(lo..up)).collect(),
            Init::Randn { mean, stdev } => (0..n)
                .map(|_| mean + stdev * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect(),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
                match dist {
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                    NormalOrUniform::Normal => (0..n)
                        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect(),
                }
            }
        };
        Tensor::from_vec(data, shape.clone(), dev)?.to_dtype(dtype)
    }
}

impl candle_nn::var_builder::SimpleBackend for ParamStore {
    fn get(
        &self,
        s: Shape,
        name: &str,
        h: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(v) = inner.vars.get(name) {
            if v.shape() != &s {
                candle_core::bail!("shape mismatch for {name}: {:?} vs {s:?}", v.shape());
            }
            return Ok(v.as_tensor().clone());
        }
        let t = match inner.preset.remove(name) {
            Some(t) => {
                if t.shape() != &s {
                    candle_core::bail!("stored weight {name} has shape {:?}, model wants {s:?}", t.shape());
                }
                t.to_dtype(dtype)?
            }
            None => self.init_tensor(&s, name, h, dtype, dev)?,
        };
        let v = Var::from_tensor(&t)?;
        inner.vars.insert(name.to_string(), v.clone());
        Ok(v.as_tensor().clone())
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        let inner = self.inner.lock().unwrap();
        match inner.vars.get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("unknown parameter {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        let inner = self.inner.lock().unwrap();
        inner.vars.contains_key(name) || inner.preset.contains_key(name)
    }
}

/// A serialisable tensor: little-endian values, base64-encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl NamedTensor {
    pub fn from_tensor(name: String, t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let (dtype, bytes) = match t.dtype() {
            DType::F64 => (
                "f64",
                flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
            ),
            _ => (
                "f32",
                flat.to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect(),
            ),
        };
        Ok(Self {
            name,
            shape: t.dims().to_vec(),
            dtype: dtype.into(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| PlaError::Serde(format!("weight {}: {e}", self.name)))?;
        let t = match self.dtype.as_str() {
            "f64" => {
                let v: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, self.shape.clone(), device)?
            }
            "f32" => {
                let v: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, self.shape.clone(), device)?
            }
            other => return Err(PlaError::Serde(format!("unknown dtype {other}"))),
        };
        Ok(t)
    }
}
