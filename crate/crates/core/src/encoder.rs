//! Hierarchical encoder: texture-aware blocks in stages 1–2, dual-attention
//! blocks in stages 3–4, patch merging between stages.

use candle_core::Tensor;

use crate::complexity::add_macs;
use crate::feature::FeatureMap;
use crate::model::ModelConfig;
use crate::nn::{gelu, global_avg_pool, sigmoid, softmax_last, ChannelNorm, Conv2d, ConvConfig, DepthwiseConv2d};
use crate::params::{Init, Scope};
use crate::tam::{TamVariant, TexturePath};
use crate::{Error, Result};

pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];
const HEAD_DIM: usize = 32;
const MASKED: f64 = -1e9;

/// E1..E4 at strides 4/8/16/32.
#[derive(Clone, Debug)]
pub struct PyramidFeatures {
    pub e1: FeatureMap,
    pub e2: FeatureMap,
    pub e3: FeatureMap,
    pub e4: FeatureMap,
}

impl PyramidFeatures {
    pub fn levels(&self) -> [&FeatureMap; 4] {
        [&self.e1, &self.e2, &self.e3, &self.e4]
    }
}

/// Number of attention heads for a width: an even count, at least two, so
/// that horizontal and vertical stripe groups get equal shares.
pub fn cwsa_heads(channels: usize) -> usize {
    let h = (channels / HEAD_DIM).max(2);
    let h = h + h % 2;
    if channels % h == 0 {
        h
    } else {
        2
    }
}

/// Cross-shaped window self-attention.
#[derive(Clone, Debug)]
pub struct Cwsa {
    qkv: Conv2d,
    proj: Conv2d,
    heads: usize,
    stripe: usize,
    channels: usize,
}

impl Cwsa {
    pub fn new(scope: &Scope, channels: usize, stripe: usize) -> Result<Self> {
        let heads = cwsa_heads(channels);
        if channels % heads != 0 || stripe == 0 {
            return Err(Error::Config(format!(
                "CWSA needs channels divisible by {heads} heads and a positive stripe width, got {channels}/{stripe}"
            )));
        }
        Ok(Self {
            qkv: Conv2d::new(&scope.pp("qkv"), channels, 3 * channels, ConvConfig::pointwise())?,
            proj: Conv2d::new(&scope.pp("proj"), channels, channels, ConvConfig::pointwise())?,
            heads,
            stripe,
            channels,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_with_weights(x)?.0)
    }

    /// Also returns the attention weights of the horizontal and vertical
    /// groups, each `(stripes·batch·heads/2, T, T)`.
    pub fn forward_with_weights(&self, x: &FeatureMap) -> Result<(FeatureMap, [Tensor; 2])> {
        let (b, c, h, w) = x.dims();
        if c != self.channels {
            return Err(Error::Shape(format!("CWSA built for {} channels, got {c}", self.channels)));
        }
        let qkv = self.qkv.forward(x.tensor())?;
        let half = c / 2;
        let hh = self.heads / 2;
        let part = |i: usize, lo: usize| qkv.narrow(1, i * c + lo, half);
        // horizontal stripes over rows
        let (oh, wh) = stripe_attention(
            &part(0, 0)?,
            &part(1, 0)?,
            &part(2, 0)?,
            hh,
            self.stripe,
        )?;
        // vertical stripes: transpose so columns become rows
        let t = |x: Tensor| -> Result<Tensor> { Ok(x.transpose(2, 3)?.contiguous()?) };
        let (ov, wv) = stripe_attention(
            &t(part(0, half)?)?,
            &t(part(1, half)?)?,
            &t(part(2, half)?)?,
            hh,
            self.stripe,
        )?;
        let ov = ov.transpose(2, 3)?.contiguous()?;
        let out = Tensor::cat(&[&oh, &ov], 1)?;
        debug_assert_eq!(out.dims(), &[b, c, h, w]);
        Ok((x.with_data(self.proj.forward(&out)?)?, [wh, wv]))
    }
}

/// Attention within horizontal stripes of `stripe` rows. Inputs are
/// `(B, heads·d, H, W)`; rows are zero-padded to a multiple of `stripe` and
/// padded keys are masked out.
fn stripe_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    stripe: usize,
) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = q.dims4()?;
    let d = c / heads;
    let hp = h.div_ceil(stripe) * stripe;
    let ns = hp / stripe;
    let tokens = stripe * w;
    let to_tokens = |x: &Tensor| -> Result<Tensor> {
        let x = if hp > h { x.pad_with_zeros(2, 0, hp - h)? } else { x.clone() };
        // (B, heads, d, ns, stripe, W) → (B, heads, ns, stripe·W, d)
        Ok(x.reshape((b, heads, d, ns, stripe, w))?
            .permute((0, 1, 3, 4, 5, 2))?
            .contiguous()?
            .reshape((b * heads * ns, tokens, d))?)
    };
    let (qt, kt, vt) = (to_tokens(q)?, to_tokens(k)?, to_tokens(v)?);
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = (qt.matmul(&kt.transpose(1, 2)?.contiguous()?)? * scale)?;
    if hp > h {
        let mut mask = vec![0f64; ns * tokens];
        for s in 0..ns {
            for r in 0..stripe {
                if s * stripe + r >= h {
                    for col in 0..w {
                        mask[s * tokens + r * w + col] = MASKED;
                    }
                }
            }
        }
        let mask = Tensor::from_vec(mask, (1, ns, 1, tokens), q.device())?
            .to_dtype(q.dtype())?
            .broadcast_as((b * heads, ns, 1, tokens))?
            .reshape((b * heads * ns, 1, tokens))?;
        scores = scores.broadcast_add(&mask)?;
    }
    let attn = softmax_last(&scores)?;
    let out = attn.matmul(&vt)?;
    add_macs(2 * (b * heads * ns * tokens * tokens * d) as u64);
    let out = out
        .reshape((b, heads, ns, stripe, w, d))?
        .permute((0, 1, 5, 2, 3, 4))?
        .contiguous()?
        .reshape((b, c, hp, w))?
        .narrow(2, 0, h)?;
    Ok((out, attn))
}

/// Convolutional channel attention block.
#[derive(Clone, Debug)]
pub struct Ccab {
    squeeze: Conv2d,
    excite: Conv2d,
    dw: DepthwiseConv2d,
}

impl Ccab {
    pub fn new(scope: &Scope, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Self {
            squeeze: Conv2d::new(&scope.pp("squeeze"), channels, hidden, ConvConfig::pointwise())?,
            excite: Conv2d::new(&scope.pp("excite"), hidden, channels, ConvConfig::pointwise())?,
            dw: DepthwiseConv2d::new(&scope.pp("dw"), channels, 3, 1, true)?,
        })
    }

    /// Channel gate `(B, C, 1, 1)` with entries in (0, 1).
    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let d = global_avg_pool(x)?;
        sigmoid(&self.excite.forward(&gelu(&self.squeeze.forward(&d)?)?)?)
    }

    /// `x ⊙ w` before the depthwise residual.
    pub fn gated(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gate(x)?)?)
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let g = self.gated(x.tensor())?;
        x.with_data((&g + self.dw.forward(&g)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Ffn {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl Ffn {
    pub fn new(scope: &Scope, channels: usize, ratio: usize) -> Result<Self> {
        let hidden = channels * ratio;
        Ok(Self {
            fc1: Conv2d::new(&scope.pp("fc1"), channels, hidden, ConvConfig::pointwise())?,
            fc2: Conv2d::new(&scope.pp("fc2"), hidden, channels, ConvConfig::pointwise())?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }
}

/// A normalized, scaled residual branch.
#[derive(Clone, Debug)]
struct Branch<M> {
    norm: ChannelNorm,
    gamma: Tensor,
    inner: M,
}

impl<M> Branch<M> {
    fn new(scope: &Scope, channels: usize, inner: M) -> Result<Self> {
        Ok(Self {
            norm: ChannelNorm::new(&scope.pp("norm"), channels)?,
            gamma: scope.var("gamma", 1, Init::ONES)?,
            inner,
        })
    }

    fn apply<F>(&self, x: &FeatureMap, f: F) -> Result<Tensor>
    where
        F: FnOnce(&M, &FeatureMap) -> Result<FeatureMap>,
    {
        let n = x.with_data(self.norm.forward(x.tensor())?)?;
        let y = f(&self.inner, &n)?;
        Ok(y.tensor().broadcast_mul(&self.gamma)?)
    }
}

/// Stages 1–2 block: `y = x + γ_t·TaM + γ_w·CWSA + γ_c·CCAB`, then `y + FFN(y)`.
/// Stages 3–4 use the same block without the TaM branch.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    texture: Option<Branch<TexturePath>>,
    cwsa: Branch<Cwsa>,
    ccab: Branch<Ccab>,
    ffn_norm: ChannelNorm,
    ffn: Ffn,
}

impl EncoderBlock {
    pub fn texture(scope: &Scope, stage: usize, channels: usize, cfg: &ModelConfig, stripe: usize) -> Result<Self> {
        Self::build(scope, channels, cfg, stripe, Some((stage, cfg.components.tam)))
    }

    pub fn dual_attention(scope: &Scope, channels: usize, cfg: &ModelConfig, stripe: usize) -> Result<Self> {
        Self::build(scope, channels, cfg, stripe, None)
    }

    fn build(
        scope: &Scope,
        channels: usize,
        cfg: &ModelConfig,
        stripe: usize,
        tam: Option<(usize, TamVariant)>,
    ) -> Result<Self> {
        let texture = match tam {
            Some((stage, variant)) => {
                let s = scope.pp("tam");
                let path = TexturePath::new(&s, channels, &cfg.tam_config(stage), variant)?;
                Some(Branch::new(&s, channels, path)?)
            }
            None => None,
        };
        let cs = scope.pp("cwsa");
        let ks = scope.pp("ccab");
        Ok(Self {
            texture,
            cwsa: Branch::new(&cs, channels, Cwsa::new(&cs, channels, stripe)?)?,
            ccab: Branch::new(&ks, channels, Ccab::new(&ks, channels, cfg.ccab_reduction)?)?,
            ffn_norm: ChannelNorm::new(&scope.pp("ffn.norm"), channels)?,
            ffn: Ffn::new(&scope.pp("ffn"), channels, cfg.mlp_ratio)?,
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut y = x.tensor().clone();
        if let Some(t) = &self.texture {
            y = (y + t.apply(x, |m, n| m.forward(n))?)?;
        }
        y = (y + self.cwsa.apply(x, |m, n| m.forward(n))?)?;
        y = (y + self.ccab.apply(x, |m, n| m.forward(n))?)?;
        let f = self.ffn.forward(&self.ffn_norm.forward(&y)?)?;
        x.with_data((&y + f)?)
    }
}

/// Strided conv + norm.
#[derive(Clone, Debug)]
struct Downsample {
    conv: Conv2d,
    norm: ChannelNorm,
}

impl Downsample {
    fn new(scope: &Scope, cin: usize, cout: usize, cfg: ConvConfig) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&scope.pp("conv"), cin, cout, cfg)?,
            norm: ChannelNorm::new(&scope.pp("norm"), cout)?,
        })
    }

    fn forward(&self, x: &FeatureMap, factor: usize) -> Result<FeatureMap> {
        let y = self.norm.forward(&self.conv.forward(x.tensor())?)?;
        FeatureMap::new(y, x.stride() * factor)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    merge: Option<Downsample>,
    blocks: Vec<EncoderBlock>,
    norm: ChannelNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Downsample,
    stages: Vec<Stage>,
}

impl Encoder {
    pub fn new(scope: &Scope, cfg: &ModelConfig) -> Result<Self> {
        let ch = cfg.stage_channels;
        let stem = Downsample::new(&scope.pp("stem"), cfg.in_channels, ch[0], ConvConfig::strided(7, 4, 3))?;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let s = scope.pp(format!("stage{}", i + 1));
            let merge = if i == 0 {
                None
            } else {
                Some(Downsample::new(&s.pp("merge"), ch[i - 1], ch[i], ConvConfig::strided(3, 2, 1))?)
            };
            let stripe = cfg.stripe_widths()[i];
            let blocks = (0..cfg.stage_depths[i])
                .map(|j| {
                    let bs = s.pp(format!("block{j}"));
                    if i < 2 {
                        EncoderBlock::texture(&bs, i, ch[i], cfg, stripe)
                    } else {
                        EncoderBlock::dual_attention(&bs, ch[i], cfg, stripe)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                merge,
                blocks,
                norm: ChannelNorm::new(&s.pp("norm"), ch[i])?,
            });
        }
        Ok(Self { stem, stages })
    }

    /// `image` is `(B, 3, H, W)` at stride 1 with H, W divisible by 32.
    pub fn forward(&self, image: &FeatureMap) -> Result<PyramidFeatures> {
        let (_, _, h, w) = image.dims();
        if image.stride() != 1 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "encoder input must be stride 1 with sides divisible by 32, got {h}x{w} at stride {}",
                image.stride()
            )));
        }
        let mut x = self.stem.forward(image, 4)?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                x = m.forward(&x, 2)?;
            }
            for block in &stage.blocks {
                x = block.forward(&x)?;
            }
            x = x.with_data(stage.norm.forward(x.tensor())?)?;
            outs.push(x.clone());
        }
        let mut it = outs.into_iter();
        Ok(PyramidFeatures {
            e1: it.next().unwrap(),
            e2: it.next().unwrap(),
            e3: it.next().unwrap(),
            e4: it.next().unwrap(),
        })
    }
}
