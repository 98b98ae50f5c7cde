//! Forward noising and DDIM sampling.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{PlaError, Result};
use crate::scenario::{complex_gaussian, derived_rng};

use super::schedule::DiffusionSchedule;

/// Anything that predicts the injected noise of a noisy batch.
///
/// `cond` is whatever conditioning representation the predictor uses; the
/// sampler only threads it through.
pub trait NoisePredictor {
    type Cond;

    fn predict_noise(&self, x_t: &Tensor, t: usize, cond: &Self::Cond) -> Result<Tensor>;
}

/// Per-item `[B]` coefficient tensor broadcastable over `x` of rank >= 1.
fn per_item(values: Vec<f64>, like: &Tensor) -> Result<Tensor> {
    let mut shape = vec![values.len()];
    shape.extend(std::iter::repeat(1).take(like.rank() - 1));
    Ok(Tensor::from_vec(values, shape, like.device())?.to_dtype(like.dtype())?)
}

/// `x_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`, one `alpha_bar` per item.
pub fn forward_marginal(x0: &Tensor, eps: &Tensor, alpha_bar: &[f64]) -> Result<Tensor> {
    let b = x0.dim(0)?;
    if alpha_bar.len() != b || eps.dims() != x0.dims() {
        return Err(PlaError::shape(
            format!("{b} coefficients and eps of shape {:?}", x0.dims()),
            format!("{} coefficients, eps {:?}", alpha_bar.len(), eps.dims()),
        ));
    }
    let signal = per_item(alpha_bar.iter().map(|a| a.sqrt()).collect(), x0)?;
    let noise = per_item(alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect(), x0)?;
    Ok((x0.broadcast_mul(&signal)? + eps.broadcast_mul(&noise)?)?)
}

pub fn forward_diffuse(
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    for &step in t {
        sched.check_step(step)?;
    }
    let ab: Vec<f64> = t.iter().map(|&s| sched.alpha_bar_at(s)).collect();
    forward_marginal(x0, eps, &ab)
}

/// Standard Gaussian tensor from a seeded stream (candle's CPU RNG is unseeded).
pub fn seeded_normal(shape: &[usize], seed: u64, stream: u64, device: &Device, dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut rng = derived_rng(seed, 0x4e4f_524d, stream);
    // real and imaginary parts of a unit complex Gaussian are N(0, 1/2); scale back to N(0, 1)
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let c = complex_gaussian(&mut rng, 2.0);
        data.push(c.re);
        if data.len() < n {
            data.push(c.im);
        }
    }
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdimConfig {
    pub steps: usize,
    pub eta: f64,
    /// Clamp the intermediate clean-sample estimate to `[-c, c]`.
    #[serde(default)]
    pub clip_x0: Option<f64>,
}

impl Default for DdimConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            eta: 0.0,
            clip_x0: None,
        }
    }
}

/// Uniformly strided steps in `1..=t_train`, ascending, always ending at `t_train`.
pub fn ddim_timesteps(t_train: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_train {
        return Err(PlaError::argument(
            "steps",
            format!("{steps} outside [1, {t_train}]"),
        ));
    }
    Ok((1..=steps).map(|i| i * t_train / steps).collect())
}

/// Run the DDIM reverse process from `x_init` (pure noise at `t_train`).
///
/// `noise_seed` drives the stochastic term when `eta > 0`.
pub fn ddim_sample<P: NoisePredictor>(
    model: &P,
    cond: &P::Cond,
    x_init: Tensor,
    sched: &DiffusionSchedule,
    cfg: &DdimConfig,
    noise_seed: u64,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(PlaError::argument("eta", format!("{} outside [0, 1]", cfg.eta)));
    }
    let ts = ddim_timesteps(sched.t_train(), cfg.steps)?;
    let mut x = x_init;
    for (i, &t) in ts.iter().enumerate().rev() {
        let t_prev = if i == 0 { 0 } else { ts[i - 1] };
        let ab = sched.alpha_bar_at(t);
        let ab_prev = sched.alpha_bar_at(t_prev);
        let mut eps = model.predict_noise(&x, t, cond)?;
        let mut x0 = ((&x - (&eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
        if let Some(c) = cfg.clip_x0 {
            // keep the noise estimate consistent with the clipped sample
            x0 = x0.clamp(-c, c)?;
            eps = ((&x - (&x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?;
        }
        let sigma = cfg.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let mut next = ((&x0 * ab_prev.sqrt())? + (&eps * dir)?)?;
        if sigma > 0.0 {
            let z = seeded_normal(x.dims(), noise_seed, t as u64, x.device(), x.dtype())?;
            next = (next + (z * sigma)?)?;
        }
        x = next;
    }
    Ok(x)
}
