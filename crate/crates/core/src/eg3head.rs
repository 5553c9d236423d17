//! Edge-guided tri-branch decoder.
//!
//! * edge: projections of E1..E4 summed while downsampling, ending at stride 16 → `P_e`
//! * detail: shallow stream (E1, E2) gated against deeper semantics (E3) → `P_d1`, `P_d2`
//! * context: pyramid pooling over E4 → `P_c`

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::encoder::PyramidFeatures;
use crate::feature::FeatureMap;
use crate::nn::{avg_pool_down, avg_pool_same, gelu, global_avg_pool, measure_params, sigmoid, Conv2d, ConvConfig, StandIn};
use crate::params::Scope;
use crate::upsample::{Align, UpsampleMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub channels: usize,
    pub in_channels: [usize; 4],
    pub pasppm_pools: [usize; 2],
    pub pasppm_dilations: [usize; 2],
    /// Width of each PASPPM branch; `None` is half the decoder width.
    pub pasppm_width: Option<usize>,
    pub bias: bool,
    pub upsampler: UpsampleMode,
    pub pasppm: bool,
    pub dam: bool,
    /// Build the edge branch (only EgFFM consumes it).
    pub edge: bool,
}

/// Forces a gate's pre-sigmoid logit, for saturation probes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GateProbe {
    #[default]
    None,
    Fixed(f64),
}

impl GateProbe {
    pub(crate) fn apply(&self, logit: Tensor) -> Result<Tensor> {
        Ok(match self {
            GateProbe::None => logit,
            GateProbe::Fixed(v) => (logit.zeros_like()? + *v)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBundle {
    /// Stride 16; absent when the edge branch is not built.
    pub p_e: Option<FeatureMap>,
    pub p_d1: FeatureMap,
    pub p_d2: FeatureMap,
    pub p_c: FeatureMap,
}

fn pointwise(scope: &Scope, cin: usize, cout: usize, bias: bool) -> Result<Conv2d> {
    Conv2d::new(scope, cin, cout, ConvConfig::pointwise().bias(bias))
}

#[derive(Clone, Debug)]
pub struct EdgeBranch {
    proj: [Conv2d; 3],
    top: Align,
}

impl EdgeBranch {
    pub fn new(scope: &Scope, cfg: &DecoderConfig) -> Result<Self> {
        let c = cfg.channels;
        let proj = [0, 1, 2].map(|i| pointwise(&scope.pp(format!("proj{}", i + 1)), cfg.in_channels[i], c, cfg.bias));
        let [p1, p2, p3] = proj;
        Ok(Self {
            proj: [p1?, p2?, p3?],
            top: Align::new(&scope.pp("top"), cfg.in_channels[3], 32, 16, c, true, cfg.bias, cfg.upsampler)?,
        })
    }

    pub fn forward(&self, p: &PyramidFeatures) -> Result<FeatureMap> {
        let mut r = self.proj[0].forward(p.e1.tensor())?;
        for (proj, e) in self.proj[1..].iter().zip([&p.e2, &p.e3]) {
            r = (avg_pool_down(&r, 2)? + proj.forward(e.tensor())?)?;
        }
        let top = self.top.forward(&p.e4)?;
        FeatureMap::new((r + top.tensor())?, 16)
    }
}

/// Pixel-attention gate between a shallow stream `x` and a deeper stream `y`:
/// `σ = sigmoid(⟨θ(x), φ(y)⟩ / √c)`, `out = σ·y + (1−σ)·x`.
#[derive(Clone, Debug)]
pub struct Dam {
    theta: Conv2d,
    phi: Conv2d,
    embed: usize,
}

impl Dam {
    pub fn new(scope: &Scope, channels: usize, bias: bool) -> Result<Self> {
        let embed = (channels / 2).max(1);
        Ok(Self {
            theta: pointwise(&scope.pp("theta"), channels, embed, bias)?,
            phi: pointwise(&scope.pp("phi"), channels, embed, bias)?,
            embed,
        })
    }

    /// `(B, 1, H, W)` gate in (0, 1).
    pub fn gate(&self, x: &Tensor, y: &Tensor, probe: GateProbe) -> Result<Tensor> {
        if x.dims() != y.dims() {
            return Err(Error::Shape(format!(
                "DAM operands differ: {:?} vs {:?}",
                x.dims(),
                y.dims()
            )));
        }
        let logit = ((self.theta.forward(x)? * self.phi.forward(y)?)?.sum_keepdim(1)?
            / (self.embed as f64).sqrt())?;
        sigmoid(&probe.apply(logit)?)
    }

    pub fn forward(&self, x: &Tensor, y: &Tensor, probe: GateProbe) -> Result<Tensor> {
        let s = self.gate(x, y, probe)?;
        // x + σ·(y − x) keeps x = y exact
        Ok((x + (y - x)?.broadcast_mul(&s)?)?)
    }
}

#[derive(Clone, Debug)]
enum DetailMerge {
    Dam(Dam),
    StandIn(StandIn),
}

#[derive(Clone, Debug)]
pub struct DetailBranch {
    shallow: Align,
    proj2: Conv2d,
    deep: Align,
    merge: DetailMerge,
    refine: Conv2d,
}

impl DetailBranch {
    pub fn new(scope: &Scope, cfg: &DecoderConfig) -> Result<Self> {
        let c = cfg.channels;
        let merge = if cfg.dam {
            DetailMerge::Dam(Dam::new(&scope.pp("dam"), c, cfg.bias)?)
        } else {
            let target = measure_params(|s| Dam::new(s, c, cfg.bias).map(|_| ()))?;
            DetailMerge::StandIn(StandIn::matched(&scope.pp("merge"), c, c, target)?)
        };
        Ok(Self {
            shallow: Align::new(&scope.pp("shallow"), cfg.in_channels[0], 4, 8, c, true, cfg.bias, cfg.upsampler)?,
            proj2: pointwise(&scope.pp("proj2"), cfg.in_channels[1], c, cfg.bias)?,
            deep: Align::new(&scope.pp("deep"), cfg.in_channels[2], 16, 8, c, true, cfg.bias, cfg.upsampler)?,
            merge,
            refine: Conv2d::new(&scope.pp("refine"), c, c, ConvConfig::same(3).bias(cfg.bias))?,
        })
    }

    /// Returns `(shallow, deep)` operands at stride 8.
    pub fn streams(&self, p: &PyramidFeatures) -> Result<(Tensor, Tensor)> {
        let shallow = (self.shallow.forward(&p.e1)?.into_tensor() + self.proj2.forward(p.e2.tensor())?)?;
        let deep = self.deep.forward(&p.e3)?.into_tensor();
        Ok((shallow, deep))
    }

    pub fn forward(&self, p: &PyramidFeatures, probe: GateProbe) -> Result<(FeatureMap, FeatureMap)> {
        let (shallow, deep) = self.streams(p)?;
        let d1 = match &self.merge {
            DetailMerge::Dam(d) => d.forward(&shallow, &deep, probe)?,
            DetailMerge::StandIn(s) => s.forward(&(shallow + deep)?)?,
        };
        let d2 = gelu(&self.refine.forward(&d1)?)?;
        Ok((FeatureMap::new(d1, 8)?, FeatureMap::new(d2, 8)?))
    }
}

/// Parallel-aggregation pyramid pooling over E4.
#[derive(Clone, Debug)]
pub struct Pasppm {
    identity: Conv2d,
    pools: [(usize, Conv2d); 2],
    dilated: [Conv2d; 2],
    global: Conv2d,
    aggregate: Vec<Conv2d>,
    compress: Conv2d,
    shortcut: Conv2d,
}

impl Pasppm {
    pub fn new(scope: &Scope, cin: usize, cfg: &DecoderConfig) -> Result<Self> {
        let c = cfg.channels;
        let bw = cfg.pasppm_width.unwrap_or((c / 2).max(1));
        let b = cfg.bias;
        let pool = |i: usize| -> Result<(usize, Conv2d)> {
            let k = cfg.pasppm_pools[i];
            if k % 2 == 0 {
                return Err(Error::Config(format!("pool size {k} must be odd")));
            }
            Ok((k, pointwise(&scope.pp(format!("pool{k}")), cin, bw, b)?))
        };
        let dil = |i: usize| {
            let d = cfg.pasppm_dilations[i];
            Conv2d::new(&scope.pp(format!("dilated{d}")), cin, bw, ConvConfig::dilated(3, d).bias(b))
        };
        Ok(Self {
            identity: pointwise(&scope.pp("identity"), cin, bw, b)?,
            pools: [pool(0)?, pool(1)?],
            dilated: [dil(0)?, dil(1)?],
            global: pointwise(&scope.pp("global"), cin, bw, b)?,
            aggregate: (0..5)
                .map(|k| Conv2d::new(&scope.pp(format!("agg{k}")), bw, bw, ConvConfig::same(3).bias(b)))
                .collect::<Result<_>>()?,
            compress: pointwise(&scope.pp("compress"), 6 * bw, c, b)?,
            shortcut: pointwise(&scope.pp("shortcut"), cin, c, b)?,
        })
    }

    /// Branch outputs ordered by growing receptive field:
    /// identity, pool_small, dilated_small, pool_large, dilated_large, global.
    pub fn branches(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, _, h, w) = x.dims4()?;
        let pooled = |i: usize| -> Result<Tensor> {
            let (k, conv) = &self.pools[i];
            conv.forward(&avg_pool_same(x, *k)?)
        };
        let g = self.global.forward(&global_avg_pool(x)?)?;
        let (b, c, _, _) = g.dims4()?;
        Ok(vec![
            self.identity.forward(x)?,
            pooled(0)?,
            gelu(&self.dilated[0].forward(x)?)?,
            pooled(1)?,
            gelu(&self.dilated[1].forward(x)?)?,
            g.broadcast_as((b, c, h, w))?.contiguous()?,
        ])
    }

    pub fn forward(&self, e4: &FeatureMap) -> Result<FeatureMap> {
        let x = e4.tensor();
        let br = self.branches(x)?;
        let mut parts = Vec::with_capacity(6);
        parts.push(br[0].clone());
        for (k, conv) in self.aggregate.iter().enumerate() {
            parts.push(conv.forward(&(&br[k] + &br[k + 1])?)?);
        }
        let cat = Tensor::cat(&parts, 1)?;
        let y = (self.compress.forward(&cat)? + self.shortcut.forward(x)?)?;
        e4.with_data(y)
    }
}

#[derive(Clone, Debug)]
enum Context {
    Pasppm(Pasppm),
    StandIn(StandIn),
}

#[derive(Clone, Debug)]
pub struct Eg3Head {
    edge: Option<EdgeBranch>,
    detail: DetailBranch,
    context: Context,
}

impl Eg3Head {
    pub fn new(scope: &Scope, cfg: &DecoderConfig) -> Result<Self> {
        let cin = cfg.in_channels[3];
        let context = if cfg.pasppm {
            Context::Pasppm(Pasppm::new(&scope.pp("context.pasppm"), cin, cfg)?)
        } else {
            let target = measure_params(|s| Pasppm::new(s, cin, cfg).map(|_| ()))?;
            Context::StandIn(StandIn::matched(&scope.pp("context.standin"), cin, cfg.channels, target)?)
        };
        Ok(Self {
            edge: if cfg.edge {
                Some(EdgeBranch::new(&scope.pp("edge"), cfg)?)
            } else {
                None
            },
            detail: DetailBranch::new(&scope.pp("detail"), cfg)?,
            context,
        })
    }

    pub fn context(&self, e4: &FeatureMap) -> Result<FeatureMap> {
        match &self.context {
            Context::Pasppm(p) => p.forward(e4),
            Context::StandIn(s) => e4.with_data(s.forward(e4.tensor())?),
        }
    }

    pub fn forward(&self, p: &PyramidFeatures) -> Result<DecoderBundle> {
        self.forward_probed(p, GateProbe::None)
    }

    pub fn forward_probed(&self, p: &PyramidFeatures, dam_probe: GateProbe) -> Result<DecoderBundle> {
        let p_e = match &self.edge {
            Some(e) => Some(e.forward(p)?),
            None => None,
        };
        let (p_d1, p_d2) = self.detail.forward(p, dam_probe)?;
        let p_c = self.context(&p.e4)?;
        Ok(DecoderBundle { p_e, p_d1, p_d2, p_c })
    }
}
