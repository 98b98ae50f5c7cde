//! Two-branch conditional U-Net that predicts the injected noise.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{self as nn, Conv2d, GroupNorm, Linear};
use serde::{Deserialize, Serialize};

use crate::error::{PlaError, Result};
use crate::nn::{conv1, conv3, downsample, norm, timestep_embedding, CrossAttention, ResBlock};
use crate::params::ParamStore;

use super::sampler::NoisePredictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    CrossAttention,
}

/// Architecture of the denoiser.
///
/// The input is first folded into `patch_size x patch_size` patches. Level
/// `l` of `n_layers` then runs at `max_channels >> (n_layers - 1 - l)`
/// channels and halves the spatial size per level. Cross-attention is used
/// at every level whose token count is at most `max_spatial`, and always at
/// the bottleneck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSpec {
    pub n_layers: usize,
    pub blocks_per_layer: usize,
    pub max_channels: usize,
    pub max_spatial: usize,
    pub time_dim: usize,
    pub patch_size: usize,
    pub conditioning: Conditioning,
    /// Also add a 1x1 projection of the condition features at every level.
    pub additive_injection: bool,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            n_layers: 2,
            blocks_per_layer: 1,
            max_channels: 32,
            max_spatial: 256,
            time_dim: 32,
            patch_size: 2,
            conditioning: Conditioning::CrossAttention,
            additive_injection: true,
            n_antennas: 8,
            n_subcarriers: 32,
        }
    }
}

impl DenoiserSpec {
    pub fn for_shape(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self {
            n_antennas,
            n_subcarriers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("blocks_per_layer", self.blocks_per_layer),
            ("max_channels", self.max_channels),
            ("max_spatial", self.max_spatial),
            ("time_dim", self.time_dim),
            ("patch_size", self.patch_size),
            ("n_antennas", self.n_antennas),
            ("n_subcarriers", self.n_subcarriers),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(PlaError::config(name, "must be positive"));
            }
        }
        if self.n_layers > 16 {
            return Err(PlaError::config("n_layers", "at most 16 levels"));
        }
        let f = self.patch_size << (self.n_layers - 1);
        if self.n_antennas % f != 0 || self.n_subcarriers % f != 0 {
            return Err(PlaError::config(
                "n_layers",
                format!(
                    "{}x{} is not divisible by {f} (patch {} and {} levels)",
                    self.n_antennas, self.n_subcarriers, self.patch_size, self.n_layers
                ),
            ));
        }
        if self.max_channels >> (self.n_layers - 1) == 0 {
            return Err(PlaError::config(
                "max_channels",
                format!("{} too small for {} levels", self.max_channels, self.n_layers),
            ));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.max_channels >> (self.n_layers - 1 - level)
    }

    fn attends(&self, level: usize) -> bool {
        let tokens = (self.n_antennas / self.patch_size >> level) * (self.n_subcarriers / self.patch_size >> level);
        level == self.n_layers - 1 || tokens <= self.max_spatial
    }
}

struct Level {
    target: Vec<ResBlock>,
    cond: Vec<ResBlock>,
    inject: Option<Conv2d>,
    attn: Option<CrossAttention>,
    down_target: Option<Conv2d>,
    down_cond: Option<Conv2d>,
}

struct UpLevel {
    up_conv: Conv2d,
    blocks: Vec<ResBlock>,
}

/// Condition-branch features, one map per level, plus the folded condition
/// itself. Computed once per condition batch and reused across sampling steps.
#[derive(Debug, Clone)]
pub struct CondFeatures {
    pub levels: Vec<Tensor>,
    pub input: Tensor,
}

pub struct Denoiser {
    spec: DenoiserSpec,
    store: ParamStore,
    dtype: DType,
    device: Device,
    time_mlp: (Linear, Linear),
    in_target: Conv2d,
    in_cond: Conv2d,
    levels: Vec<Level>,
    mid: ResBlock,
    ups: Vec<UpLevel>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
    // step-gated linear bypass from both inputs straight to the output
    bypass_x: Conv2d,
    bypass_c: Conv2d,
    bypass_gain: Linear,
}

impl std::fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("spec", &self.spec)
            .field("n_parameters", &self.store.n_parameters())
            .finish()
    }
}

impl Denoiser {
    pub fn new(spec: &DenoiserSpec, store: ParamStore, dtype: DType, device: &Device) -> Result<Self> {
        spec.validate()?;
        let vb = store.var_builder(dtype, device);
        let td = spec.time_dim;
        let time_mlp = (
            nn::linear(td, td, vb.pp("time.0"))?,
            nn::linear(td, td, vb.pp("time.1"))?,
        );
        let c0 = spec.channels(0);
        let folded = 2 * spec.patch_size * spec.patch_size;
        let in_target = conv3(folded, c0, vb.pp("in_target"))?;
        let in_cond = conv3(folded, c0, vb.pp("in_cond"))?;
        let mut levels = Vec::with_capacity(spec.n_layers);
        let mut prev = c0;
        for l in 0..spec.n_layers {
            let ch = spec.channels(l);
            let lvb = vb.pp(format!("down.{l}"));
            let mut target = Vec::new();
            let mut cond = Vec::new();
            for n in 0..spec.blocks_per_layer {
                let cin = if n == 0 { prev } else { ch };
                target.push(ResBlock::new(cin, ch, Some(td), lvb.pp(format!("target.{n}")))?);
                cond.push(ResBlock::new(cin, ch, None, lvb.pp(format!("cond.{n}")))?);
            }
            let inject = if spec.additive_injection {
                Some(conv1(ch, ch, lvb.pp("inject"))?)
            } else {
                None
            };
            let attn = if spec.attends(l) {
                Some(CrossAttention::new(ch, ch, lvb.pp("attn"))?)
            } else {
                None
            };
            let last = l + 1 == spec.n_layers;
            levels.push(Level {
                target,
                cond,
                inject,
                attn,
                down_target: (!last).then(|| downsample(ch, lvb.pp("down_target"))).transpose()?,
                down_cond: (!last).then(|| downsample(ch, lvb.pp("down_cond"))).transpose()?,
            });
            prev = ch;
        }
        let top = spec.channels(spec.n_layers - 1);
        let mid = ResBlock::new(top, top, Some(td), vb.pp("mid"))?;
        let mut ups = Vec::new();
        for l in (0..spec.n_layers - 1).rev() {
            let ch = spec.channels(l);
            let uvb = vb.pp(format!("up.{l}"));
            let up_conv = conv3(spec.channels(l + 1), ch, uvb.pp("conv"))?;
            let blocks = (0..spec.blocks_per_layer)
                .map(|n| {
                    let cin = if n == 0 { 2 * ch } else { ch };
                    ResBlock::new(cin, ch, Some(td), uvb.pp(format!("block.{n}")))
                })
                .collect::<Result<Vec<_>>>()?;
            ups.push(UpLevel { up_conv, blocks });
        }
        let out_norm = norm(c0, vb.pp("out_norm"))?;
        let out_conv = conv3(c0, folded, vb.pp("out_conv"))?;
        let bypass_x = conv1(folded, folded, vb.pp("bypass_x"))?;
        let bypass_c = conv1(folded, folded, vb.pp("bypass_c"))?;
        let bypass_gain = nn::linear(td, 2 * folded, vb.pp("bypass_gain"))?;
        Ok(Self {
            spec: spec.clone(),
            store,
            dtype,
            device: device.clone(),
            time_mlp,
            in_target,
            in_cond,
            levels,
            mid,
            ups,
            out_norm,
            out_conv,
            bypass_x,
            bypass_c,
            bypass_gain,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 2 || h != self.spec.n_antennas || w != self.spec.n_subcarriers {
            return Err(PlaError::shape(
                format!("[B, 2, {}, {}]", self.spec.n_antennas, self.spec.n_subcarriers),
                format!("{:?}", x.dims()),
            ));
        }
        Ok(())
    }

    fn fold(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.spec.patch_size;
        if p == 1 {
            return Ok(x.clone());
        }
        let (b, c, h, w) = x.dims4()?;
        Ok(x
            .reshape(vec![b, c, h / p, p, w / p, p])?
            .permute(vec![0, 1, 3, 5, 2, 4])?
            .reshape((b, c * p * p, h / p, w / p))?)
    }

    fn unfold(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.spec.patch_size;
        if p == 1 {
            return Ok(x.clone());
        }
        let (b, cpp, hp, wp) = x.dims4()?;
        let c = cpp / (p * p);
        Ok(x
            .reshape(vec![b, c, p, p, hp, wp])?
            .permute(vec![0, 1, 4, 2, 5, 3])?
            .reshape((b, c, hp * p, wp * p))?)
    }

    /// Run the condition branch on normalised `[B, 2, H, W]` condition images.
    pub fn encode_condition(&self, cond: &Tensor) -> Result<CondFeatures> {
        self.check_input(cond)?;
        let input = self.fold(cond)?;
        let mut h = self.in_cond.forward(&input)?;
        let mut feats = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            for block in &level.cond {
                h = block.forward(&h, None)?;
            }
            feats.push(h.clone());
            if let Some(d) = &level.down_cond {
                h = d.forward(&h)?;
            }
        }
        Ok(CondFeatures { levels: feats, input })
    }

    fn time_embedding(&self, t: &[usize]) -> Result<Tensor> {
        let e = timestep_embedding(t, self.spec.time_dim, &self.device, self.dtype)?;
        let e = self.time_mlp.0.forward(&e)?.silu()?;
        Ok(self.time_mlp.1.forward(&e)?)
    }

    /// Predict the noise in `x_t` at per-item steps `t`.
    pub fn forward(&self, x_t: &Tensor, t: &[usize], cond: &CondFeatures) -> Result<Tensor> {
        self.check_input(x_t)?;
        let b = x_t.dim(0)?;
        if t.len() != b || cond.input.dim(0)? != b {
            return Err(PlaError::shape(
                format!("{b} steps and condition batch {b}"),
                format!("{} steps", t.len()),
            ));
        }
        let emb = self.time_embedding(t)?;
        let folded = self.fold(x_t)?;
        let mut h = self.in_target.forward(&folded)?;
        let mut skips = Vec::new();
        for (level, c) in self.levels.iter().zip(&cond.levels) {
            for block in &level.target {
                h = block.forward(&h, Some(&emb))?;
            }
            if let Some(inj) = &level.inject {
                h = (h + inj.forward(c)?)?;
            }
            if let Some(attn) = &level.attn {
                h = attn.forward(&h, c)?;
            }
            if let Some(d) = &level.down_target {
                skips.push(h.clone());
                h = d.forward(&h)?;
            }
        }
        h = self.mid.forward(&h, Some(&emb))?;
        for up in &self.ups {
            let skip = skips.pop().expect("one skip per upsampling level");
            let (_, _, sh, sw) = skip.dims4()?;
            h = up.up_conv.forward(&h.upsample_nearest2d(sh, sw)?)?;
            h = Tensor::cat(&[&h, &skip], 1)?;
            for block in &up.blocks {
                h = block.forward(&h, Some(&emb))?;
            }
        }
        let h = self.out_norm.forward(&h)?.silu()?;
        let gains = self.bypass_gain.forward(&emb)?.unsqueeze(2)?.unsqueeze(3)?;
        let k = gains.dim(1)? / 2;
        let bypass = (self.bypass_x.forward(&folded)?.broadcast_mul(&gains.narrow(1, 0, k)?)?
            + self.bypass_c.forward(&cond.input)?.broadcast_mul(&gains.narrow(1, k, k)?)?)?;
        self.unfold(&(self.out_conv.forward(&h)? + bypass)?)
    }
}

impl NoisePredictor for Denoiser {
    type Cond = CondFeatures;

    fn predict_noise(&self, x_t: &Tensor, t: usize, cond: &CondFeatures) -> Result<Tensor> {
        let b = x_t.dim(0)?;
        self.forward(x_t, &vec![t; b], cond)
    }
}
