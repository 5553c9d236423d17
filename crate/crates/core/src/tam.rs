//! Texture-aware module (TaM).
//!
//! ```text
//! X ──QCO──► L' ──level conv──► ·B ──► concat with X ──► X'
//! X' ─┬─ QCO → conv3×3 → pool /8 ─ dys ×8 ─┐
//!     ├─ QCO → conv3×3 → pool /4 ─ dys ×4 ─┤
//!     ├─ QCO → conv3×3 → pool /2 ─ dys ×2 ─┼─ concat → 1×1 conv ─► X_TaM
//!     └─ QCO → conv3×3 ────────────────────┘
//! ```
//!
//! The four branches re-run QCO on `X'` with their own parameters. Their
//! parameter-free statistics are identical when they share a level count, so
//! those are computed once per distinct `N`.

use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::feature::FeatureMap;
use crate::nn::{avg_pool_down, gelu, Conv2d, ConvConfig, LevelConv, StandIn};
use crate::params::Scope;
use crate::qco::{spatial_reproject, CountingMlp, Qco, QuantStats};
use crate::upsample::{DynamicUpsampler, UpsampleMode};
use crate::{Error, Result};

/// Pooling divisors of the four branches (relative scales 1/8, 1/4, 1/2, 1).
pub const BRANCH_POOLS: [usize; 4] = [8, 4, 2, 1];

/// Which texture path a texture-aware block carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamVariant {
    #[default]
    Full,
    /// QCO features fused directly: no level attention, no multi-scale branches.
    QcoOnly,
    /// Parameter-matched plain convolution in place of TaM.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamConfig {
    pub levels: usize,
    /// Width `C_a` of counting features, updated levels and reprojections.
    pub qco_width: usize,
    /// Optional per-branch level counts (1/8, 1/4, 1/2, 1). `None` reuses `levels`.
    pub branch_levels: Option<[usize; 4]>,
    pub upsampler: UpsampleMode,
}

/// Intermediate products of one TaM pass.
#[derive(Clone, Debug)]
pub struct TamFeatures {
    /// `X'`: reprojected texture channels followed by the input channels.
    pub enhanced: FeatureMap,
    /// `X''` per branch, coarsest first.
    pub branches: Vec<FeatureMap>,
    /// `X_TaM`.
    pub fused: FeatureMap,
}

#[derive(Clone, Debug)]
struct TamBranch {
    pool: usize,
    qco: Qco,
    conv: Conv2d,
}

impl TamBranch {
    fn forward(&self, stats: QuantStats, stride: usize) -> Result<FeatureMap> {
        let texture = self.qco.spatial_from(stats, stride)?;
        let t = gelu(&self.conv.forward(texture.tensor())?)?;
        let t = avg_pool_down(&t, self.pool)?;
        FeatureMap::new(t, stride * self.pool)
    }
}

#[derive(Clone, Debug)]
pub struct Tam {
    channels: usize,
    qco: Qco,
    level_proj: LevelConv,
    branches: Vec<TamBranch>,
    upsamplers: Vec<DynamicUpsampler>,
    fuse: Conv2d,
}

impl Tam {
    pub fn new(scope: &Scope, channels: usize, cfg: &TamConfig) -> Result<Self> {
        let ca = cfg.qco_width;
        let branch_width = (channels / 4).max(4);
        let levels = cfg.branch_levels.unwrap_or([cfg.levels; 4]);
        let branches = BRANCH_POOLS
            .iter()
            .zip(levels)
            .enumerate()
            .map(|(i, (&pool, n))| {
                let s = scope.pp(format!("branch{i}"));
                Ok(TamBranch {
                    pool,
                    qco: Qco::new(&s.pp("qco"), n, ca)?,
                    conv: Conv2d::new(&s.pp("conv"), ca, branch_width, ConvConfig::same(3))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // one upsampler per coarse branch
        let upsamplers = BRANCH_POOLS[..3]
            .iter()
            .enumerate()
            .map(|(i, &scale)| {
                DynamicUpsampler::new(&scope.pp(format!("up{i}")), branch_width, scale, cfg.upsampler)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels,
            qco: Qco::new(&scope.pp("qco"), cfg.levels, ca)?,
            level_proj: LevelConv::new(&scope.pp("level_proj"), ca, ca, 3)?,
            branches,
            upsamplers,
            fuse: Conv2d::new(
                &scope.pp("fuse"),
                4 * branch_width,
                channels,
                ConvConfig::pointwise(),
            )?,
        })
    }

    /// `X' = concat(Conv(L')·B, X)`.
    pub fn enhance(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let (_, c, h, w) = x.dims();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "TaM built for {} channels, got {c}",
                self.channels
            )));
        }
        let q = self.qco.quantize(x.tensor())?;
        let lproj = self.level_proj.forward(&q.updated_levels)?;
        let reprojected = spatial_reproject(&lproj, &q.stats.encoding, h, w)?;
        x.with_data(Tensor::cat(&[&reprojected, x.tensor()], 1)?)
    }

    /// `X''` for every branch, coarsest first.
    pub fn branches(&self, enhanced: &FeatureMap) -> Result<Vec<FeatureMap>> {
        let mut stats: BTreeMap<usize, QuantStats> = BTreeMap::new();
        self.branches
            .iter()
            .map(|b| {
                let n = b.qco.levels();
                if !stats.contains_key(&n) {
                    stats.insert(n, QuantStats::compute(enhanced.tensor(), n)?);
                }
                b.forward(stats[&n].clone(), enhanced.stride())
            })
            .collect()
    }

    /// `X_TaM = Conv(concat(dys(X''_{1/8}), dys(X''_{1/4}), dys(X''_{1/2}), X''))`.
    pub fn fuse(&self, branches: &[FeatureMap]) -> Result<FeatureMap> {
        if branches.len() != 4 {
            return Err(Error::Shape(format!(
                "TaM fuses 4 branches, got {}",
                branches.len()
            )));
        }
        let base = &branches[3];
        let mut parts = Vec::with_capacity(4);
        let (bh, bw) = base.spatial();
        for (branch, up) in branches[..3].iter().zip(&self.upsamplers) {
            let mut u = up.forward(branch)?;
            // a branch pooled from a replicate-padded map comes back larger
            let (uh, uw) = u.spatial();
            if u.stride() == base.stride() && uh >= bh && uw >= bw && (uh, uw) != (bh, bw) {
                u = u.with_data(u.tensor().narrow(2, 0, bh)?.narrow(3, 0, bw)?)?;
            }
            if u.spatial() != base.spatial() || u.stride() != base.stride() {
                return Err(Error::Shape(format!(
                    "branch upsampled to {:?} at stride {}, base is {:?} at stride {}",
                    u.spatial(),
                    u.stride(),
                    base.spatial(),
                    base.stride()
                )));
            }
            parts.push(u.into_tensor());
        }
        parts.push(base.tensor().clone());
        let cat = Tensor::cat(&parts, 1)?;
        base.with_data(self.fuse.forward(&cat)?)
    }

    pub fn forward_features(&self, x: &FeatureMap) -> Result<TamFeatures> {
        let enhanced = self.enhance(x)?;
        let branches = self.branches(&enhanced)?;
        let fused = self.fuse(&branches)?;
        Ok(TamFeatures {
            enhanced,
            branches,
            fused,
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_features(x)?.fused)
    }
}

/// QCO features concatenated with the input and mixed by a 1×1 conv, without
/// level attention or the multi-scale branches.
#[derive(Clone, Debug)]
pub struct QcoOnly {
    levels: usize,
    mlp: CountingMlp,
    level_proj: LevelConv,
    fuse: Conv2d,
}

impl QcoOnly {
    pub fn new(scope: &Scope, channels: usize, cfg: &TamConfig) -> Result<Self> {
        let ca = cfg.qco_width;
        Ok(Self {
            levels: cfg.levels,
            mlp: CountingMlp::new(&scope.pp("qco.mlp"), ca)?,
            level_proj: LevelConv::new(&scope.pp("level_proj"), ca, ca, 3)?,
            fuse: Conv2d::new(&scope.pp("fuse"), channels + ca, channels, ConvConfig::pointwise())?,
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let (_, _, h, w) = x.dims();
        let stats = QuantStats::compute(x.tensor(), self.levels)?;
        let a = self.mlp.forward(&stats.levels, &stats.counts)?;
        let lproj = self.level_proj.forward(&a)?;
        let r = spatial_reproject(&lproj, &stats.encoding, h, w)?;
        let cat = Tensor::cat(&[&r, x.tensor()], 1)?;
        x.with_data(self.fuse.forward(&cat)?)
    }
}

/// The texture branch of a texture-aware block, per ablation variant.
#[derive(Clone, Debug)]
pub enum TexturePath {
    Full(Tam),
    QcoOnly(QcoOnly),
    StandIn(StandIn),
}

impl TexturePath {
    pub fn new(scope: &Scope, channels: usize, cfg: &TamConfig, variant: TamVariant) -> Result<Self> {
        Ok(match variant {
            TamVariant::Full => TexturePath::Full(Tam::new(scope, channels, cfg)?),
            TamVariant::QcoOnly => TexturePath::QcoOnly(QcoOnly::new(scope, channels, cfg)?),
            TamVariant::None => {
                let target = crate::nn::measure_params(|s| Tam::new(s, channels, cfg).map(|_| ()))?;
                TexturePath::StandIn(StandIn::matched(scope, channels, channels, target)?)
            }
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        match self {
            TexturePath::Full(t) => t.forward(x),
            TexturePath::QcoOnly(q) => q.forward(x),
            TexturePath::StandIn(s) => x.with_data(s.forward(x.tensor())?),
        }
    }
}
