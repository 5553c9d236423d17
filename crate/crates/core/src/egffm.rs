//! Edge-gated fusion of detail and context streams, and the segmentation head.
//!
//! ```text
//! σ3 = sigmoid(conv1x1(dys(P_e, 2)))                       stride 8
//! F  = dys(conv(σ3·P_d2) + conv((1−σ3)·dys(P_c, 4)), 2)    stride 4
//! ```

use candle_core::{DType, Tensor};

use crate::eg3head::{DecoderBundle, GateProbe};
use crate::feature::FeatureMap;
use crate::nn::{gelu, sigmoid, Conv2d, ConvConfig};
use crate::params::Scope;
use crate::upsample::{DynamicUpsampler, UpsampleMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub channels: usize,
    pub bias: bool,
    pub upsampler: UpsampleMode,
    /// Gate is applied at all; otherwise detail and context are summed.
    pub enabled: bool,
    /// Use `dys(P_e, 2)` as the `(1−σ3)` operand instead of the context stream.
    pub edge_operand: bool,
}

#[derive(Clone, Debug)]
pub struct EdgeGate {
    up: DynamicUpsampler,
    conv: Conv2d,
}

impl EdgeGate {
    pub fn new(scope: &Scope, channels: usize, bias: bool, mode: UpsampleMode) -> Result<Self> {
        Ok(Self {
            up: DynamicUpsampler::new(&scope.pp("up"), channels, 2, mode)?,
            conv: Conv2d::new(&scope.pp("conv"), channels, 1, ConvConfig::pointwise().bias(bias))?,
        })
    }

    /// Returns `(σ3, dys(P_e, 2))`, both at stride 8.
    pub fn forward(&self, p_e: &FeatureMap, probe: GateProbe) -> Result<(FeatureMap, FeatureMap)> {
        if p_e.stride() != 16 {
            return Err(Error::Shape(format!("P_e must be stride 16, got {}", p_e.stride())));
        }
        let up = self.up.forward(p_e)?;
        let logit = probe.apply(self.conv.forward(up.tensor())?)?;
        Ok((up.with_data(sigmoid(&logit)?)?, up))
    }
}

#[derive(Clone, Debug)]
pub struct Egffm {
    gate: Option<EdgeGate>,
    ctx_up: DynamicUpsampler,
    conv_d: Option<Conv2d>,
    conv_c: Option<Conv2d>,
    out_up: DynamicUpsampler,
    edge_operand: bool,
}

impl Egffm {
    pub fn new(scope: &Scope, cfg: &FusionConfig) -> Result<Self> {
        let c = cfg.channels;
        let conv = |name: &str| Conv2d::new(&scope.pp(name), c, c, ConvConfig::same(3).bias(cfg.bias));
        let (gate, conv_d, conv_c) = if cfg.enabled {
            (
                Some(EdgeGate::new(&scope.pp("gate"), c, cfg.bias, cfg.upsampler)?),
                Some(conv("conv_d")?),
                Some(conv("conv_c")?),
            )
        } else {
            (None, None, None)
        };
        Ok(Self {
            gate,
            ctx_up: DynamicUpsampler::new(&scope.pp("ctx_up"), c, 4, cfg.upsampler)?,
            conv_d,
            conv_c,
            out_up: DynamicUpsampler::new(&scope.pp("out_up"), c, 2, cfg.upsampler)?,
            edge_operand: cfg.edge_operand,
        })
    }

    pub fn gated(&self) -> bool {
        self.gate.is_some()
    }

    /// The two summands before the final upsampling, `(detail, context)` at
    /// stride 8, plus σ3 when gating is enabled.
    pub fn terms(&self, b: &DecoderBundle, probe: GateProbe) -> Result<(Tensor, Tensor, Option<FeatureMap>)> {
        if b.p_d2.stride() != 8 || b.p_c.stride() != 32 {
            return Err(Error::Shape(format!(
                "fusion expects P_d2 at stride 8 and P_c at 32, got {} and {}",
                b.p_d2.stride(),
                b.p_c.stride()
            )));
        }
        let ctx = self.ctx_up.forward(&b.p_c)?;
        if ctx.spatial() != b.p_d2.spatial() {
            return Err(Error::Shape(format!(
                "context at {:?} does not match detail at {:?}",
                ctx.spatial(),
                b.p_d2.spatial()
            )));
        }
        let (Some(gate), Some(conv_d), Some(conv_c)) = (&self.gate, &self.conv_d, &self.conv_c) else {
            return Ok((b.p_d2.tensor().clone(), ctx.into_tensor(), None));
        };
        let p_e = b
            .p_e
            .as_ref()
            .ok_or_else(|| Error::Config("edge-gated fusion needs P_e".into()))?;
        let (sigma, edge_up) = gate.forward(p_e, probe)?;
        let s = sigma.tensor();
        let second = if self.edge_operand { edge_up.tensor() } else { ctx.tensor() };
        let detail = conv_d.forward(&b.p_d2.tensor().broadcast_mul(s)?)?;
        let context = conv_c.forward(&second.broadcast_mul(&(1.0 - s)?)?)?;
        Ok((detail, context, Some(sigma)))
    }

    pub fn forward(&self, b: &DecoderBundle) -> Result<FeatureMap> {
        self.forward_probed(b, GateProbe::None)
    }

    pub fn forward_probed(&self, b: &DecoderBundle, probe: GateProbe) -> Result<FeatureMap> {
        let (d, c, _) = self.terms(b, probe)?;
        self.out_up.forward(&FeatureMap::new((d + c)?, 8)?)
    }
}

/// Per-pixel class scores at input resolution.
#[derive(Clone, Debug)]
pub struct SegmentationOutput {
    pub logits: FeatureMap,
}

impl SegmentationOutput {
    /// Softmax over classes, `(B, K, H, W)`.
    pub fn probabilities(&self) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(self.logits.tensor(), 1)?)
    }

    /// Per-pixel argmax, `(B, H, W)` as `u32`.
    pub fn class_map(&self) -> Result<Tensor> {
        Ok(self.logits.tensor().argmax(1)?.to_dtype(DType::U32)?)
    }
}

#[derive(Clone, Debug)]
pub struct SegmentHead {
    proj_e1: Conv2d,
    merge: Conv2d,
    fc1: Conv2d,
    fc2: Conv2d,
    up: DynamicUpsampler,
}

impl SegmentHead {
    pub fn new(
        scope: &Scope,
        e1_channels: usize,
        channels: usize,
        num_classes: usize,
        mode: UpsampleMode,
    ) -> Result<Self> {
        let pw = ConvConfig::pointwise();
        Ok(Self {
            proj_e1: Conv2d::new(&scope.pp("proj_e1"), e1_channels, channels, pw)?,
            merge: Conv2d::new(&scope.pp("merge"), 2 * channels, channels, pw)?,
            fc1: Conv2d::new(&scope.pp("fc1"), channels, channels, pw)?,
            fc2: Conv2d::new(&scope.pp("fc2"), channels, num_classes, pw)?,
            up: DynamicUpsampler::new(&scope.pp("up"), num_classes, 4, mode)?,
        })
    }

    /// The integrated feature `G` at stride 4.
    pub fn integrate(&self, f: &FeatureMap, e1: &FeatureMap) -> Result<FeatureMap> {
        if f.stride() != 4 || e1.stride() != 4 || f.spatial() != e1.spatial() {
            return Err(Error::Shape(format!(
                "head expects F and E1 at stride 4 with equal size, got {:?}@{} and {:?}@{}",
                f.spatial(),
                f.stride(),
                e1.spatial(),
                e1.stride()
            )));
        }
        let cat = Tensor::cat(&[f.tensor(), &self.proj_e1.forward(e1.tensor())?], 1)?;
        f.with_data(self.merge.forward(&cat)?)
    }

    pub fn forward(&self, f: &FeatureMap, e1: &FeatureMap) -> Result<SegmentationOutput> {
        let g = self.integrate(f, e1)?;
        let logits = self.fc2.forward(&gelu(&self.fc1.forward(g.tensor())?)?)?;
        let logits = self.up.forward(&g.with_data(logits)?)?;
        Ok(SegmentationOutput { logits })
    }
}
