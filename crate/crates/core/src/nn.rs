//! Building blocks shared by the diffusion denoiser and the VAE baseline.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{self as nn, Conv2d, Conv2dConfig, GroupNorm, Linear, VarBuilder};

use crate::error::Result;

pub(crate) fn groups_for(channels: usize) -> usize {
    [8, 4, 2]
        .into_iter()
        .find(|g| channels % g == 0 && channels / g >= 2)
        .unwrap_or(1)
}

pub(crate) fn conv3(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    nn::conv2d(
        cin,
        cout,
        3,
        Conv2dConfig {
            padding: 1,
            ..Default::default()
        },
        vb,
    )
}

pub(crate) fn conv1(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    nn::conv2d(cin, cout, 1, Default::default(), vb)
}

pub(crate) fn norm(channels: usize, vb: VarBuilder) -> candle_core::Result<GroupNorm> {
    nn::group_norm(groups_for(channels), channels, 1e-5, vb)
}

/// Sinusoidal embedding of integer diffusion steps, `[B, dim]`.
pub fn timestep_embedding(t: &[usize], dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((step as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((step as f64 * freq).cos());
        }
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), device)?.to_dtype(dtype)?)
}

/// Fixed 2-D sinusoidal position code, `[H*W, channels]`.
pub fn position_code(h: usize, w: usize, channels: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let quarter = (channels / 4).max(1);
    let mut data = vec![0.0; h * w * channels];
    for y in 0..h {
        for x in 0..w {
            let row = &mut data[(y * w + x) * channels..(y * w + x + 1) * channels];
            for i in 0..quarter {
                let freq = 1.0 / 100f64.powf(i as f64 / quarter as f64);
                let slots = [
                    (y as f64 * freq).sin(),
                    (y as f64 * freq).cos(),
                    (x as f64 * freq).sin(),
                    (x as f64 * freq).cos(),
                ];
                for (j, v) in slots.into_iter().enumerate() {
                    if let Some(slot) = row.get_mut(4 * i + j) {
                        *slot = v;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (h * w, channels), device)?.to_dtype(dtype)?)
}

/// Two 3x3 convolutions with group norm and SiLU, an optional per-channel
/// embedding shift between them, and a residual connection.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb_proj: Option<Linear>,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(cin: usize, cout: usize, emb_dim: Option<usize>, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm1: norm(cin, vb.pp("norm1"))?,
            conv1: conv3(cin, cout, vb.pp("conv1"))?,
            emb_proj: emb_dim
                .map(|d| nn::linear(d, cout, vb.pp("emb_proj")))
                .transpose()?,
            norm2: norm(cout, vb.pp("norm2"))?,
            conv2: conv3(cout, cout, vb.pp("conv2"))?,
            skip: if cin != cout {
                Some(conv1(cin, cout, vb.pp("skip"))?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor, emb: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        if let (Some(proj), Some(e)) = (&self.emb_proj, emb) {
            let shift = proj.forward(&e.silu()?)?.unsqueeze(2)?.unsqueeze(3)?;
            h = h.broadcast_add(&shift)?;
        }
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let residual = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((h + residual)?)
    }
}

/// Single-head attention from the query feature map onto a context feature
/// map, added residually. Queries and keys carry a fixed position code so the
/// attention can align locations across the two maps.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    norm_q: GroupNorm,
    norm_kv: GroupNorm,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    to_out: Linear,
    dim: usize,
}

impl CrossAttention {
    pub fn new(channels: usize, ctx_channels: usize, vb: VarBuilder) -> Result<Self> {
        let dim = channels;
        Ok(Self {
            norm_q: norm(channels, vb.pp("norm_q"))?,
            norm_kv: norm(ctx_channels, vb.pp("norm_kv"))?,
            to_q: nn::linear_no_bias(channels, dim, vb.pp("to_q"))?,
            to_k: nn::linear_no_bias(ctx_channels, dim, vb.pp("to_k"))?,
            to_v: nn::linear_no_bias(ctx_channels, dim, vb.pp("to_v"))?,
            to_out: nn::linear(dim, channels, vb.pp("to_out"))?,
            dim,
        })
    }

    fn tokens(x: &Tensor) -> Result<Tensor> {
        // [B, C, H, W] -> [B, HW, C]
        Ok(x.flatten_from(2)?.transpose(1, 2)?.contiguous()?)
    }

    pub fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (_, cc, hc, wc) = ctx.dims4()?;
        let q_in = Self::tokens(&self.norm_q.forward(x)?)?;
        let kv_in = Self::tokens(&self.norm_kv.forward(ctx)?)?;
        let pq = position_code(h, w, c, x.device(), x.dtype())?;
        let pk = position_code(hc, wc, cc, x.device(), x.dtype())?;
        let q = self.to_q.forward(&q_in.broadcast_add(&pq)?)?;
        let k = self.to_k.forward(&kv_in.broadcast_add(&pk)?)?;
        let v = self.to_v.forward(&kv_in)?;
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (self.dim as f64).sqrt())?;
        let attn = nn::ops::softmax(&scores, D::Minus1)?;
        let out = self.to_out.forward(&attn.matmul(&v)?)?;
        let out = out.transpose(1, 2)?.reshape((b, c, h, w))?;
        Ok((x + out)?)
    }
}

/// Stride-2 3x3 convolution.
pub(crate) fn downsample(channels: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    nn::conv2d(
        channels,
        channels,
        3,
        Conv2dConfig {
            padding: 1,
            stride: 2,
            ..Default::default()
        },
        vb,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn blocks_preserve_shapes() {
        let dev = Device::Cpu;
        let store = ParamStore::new(0);
        let vb = store.var_builder(DType::F32, &dev);
        let rb = ResBlock::new(4, 8, Some(6), vb.pp("rb")).unwrap();
        let x = Tensor::ones((3, 4, 4, 8), DType::F32, &dev).unwrap();
        let e = Tensor::ones((3, 6), DType::F32, &dev).unwrap();
        let y = rb.forward(&x, Some(&e)).unwrap();
        assert_eq!(y.dims(), &[3, 8, 4, 8]);
        let ca = CrossAttention::new(8, 8, vb.pp("ca")).unwrap();
        let z = ca.forward(&y, &y).unwrap();
        assert_eq!(z.dims(), &[3, 8, 4, 8]);
        let te = timestep_embedding(&[1, 500], 7, &dev, DType::F32).unwrap();
        assert_eq!(te.dims(), &[2, 7]);
    }
}
