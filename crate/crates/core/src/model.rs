//! Model configuration and the assembled network.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::eg3head::{DecoderBundle, DecoderConfig, Eg3Head, GateProbe};
use crate::egffm::{Egffm, FusionConfig, SegmentHead, SegmentationOutput};
use crate::encoder::{cwsa_heads, Encoder, PyramidFeatures};
use crate::feature::FeatureMap;
use crate::params::ParamStore;
use crate::tam::{TamConfig, TamVariant};
use crate::upsample::UpsampleMode;
use crate::{Error, Result};

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub tam: TamVariant,
    pub pasppm: bool,
    pub dam: bool,
    pub egffm: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self::all_on()
    }
}

impl Components {
    pub fn all_on() -> Self {
        Self {
            tam: TamVariant::Full,
            pasppm: true,
            dam: true,
            egffm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    /// Quantization levels `N` for the TaM stages (1 and 2).
    pub qco_levels: [usize; 2],
    /// Per-branch level counts (1/8, 1/4, 1/2, 1); `None` reuses the stage's `N`.
    pub tam_branch_levels: Option<[usize; 4]>,
    /// Width of QCO counting features.
    pub qco_width: usize,
    pub stripe_width: usize,
    pub mlp_ratio: usize,
    pub ccab_reduction: usize,
    pub decoder_channels: usize,
    pub pasppm_pools: [usize; 2],
    pub pasppm_dilations: [usize; 2],
    pub pasppm_width: Option<usize>,
    pub decoder_bias: bool,
    pub upsampler: UpsampleMode,
    pub edge_operand: bool,
    pub components: Components,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// CPU-trainable configuration exercising every code path.
    pub fn toy() -> Self {
        Self {
            num_classes: 5,
            in_channels: 3,
            stage_channels: [32, 64, 128, 256],
            stage_depths: [2, 2, 2, 2],
            qco_levels: [8, 8],
            tam_branch_levels: None,
            qco_width: 16,
            stripe_width: 2,
            mlp_ratio: 2,
            ccab_reduction: 4,
            decoder_channels: 64,
            pasppm_pools: [5, 9],
            pasppm_dilations: [2, 4],
            pasppm_width: None,
            decoder_bias: true,
            upsampler: UpsampleMode::Dynamic,
            edge_operand: false,
            components: Components::all_on(),
            seed: 0,
        }
    }

    /// Narrower, shallower variant sized for multi-seed ablation sweeps.
    pub fn ablation() -> Self {
        Self {
            stage_channels: [16, 32, 48, 64],
            stage_depths: [1, 1, 1, 1],
            qco_width: 8,
            decoder_channels: 32,
            ..Self::toy()
        }
    }

    /// Full-scale guess; the true backbone widths and depths are unknown.
    pub fn paper_scale() -> Self {
        Self {
            num_classes: 6,
            stage_channels: [64, 128, 320, 512],
            stage_depths: [2, 4, 12, 2],
            qco_levels: [16, 16],
            qco_width: 64,
            stripe_width: 7,
            mlp_ratio: 4,
            decoder_channels: 256,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "ablation" => Ok(Self::ablation()),
            "paper_scale" => Ok(Self::paper_scale()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected toy, ablation, paper_scale)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        let positive = [
            ("in_channels", self.in_channels),
            ("qco_width", self.qco_width),
            ("stripe_width", self.stripe_width),
            ("mlp_ratio", self.mlp_ratio),
            ("ccab_reduction", self.ccab_reduction),
            ("decoder_channels", self.decoder_channels),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be positive"));
        }
        if self.stage_channels.iter().any(|&c| c == 0) || self.stage_depths.iter().any(|&d| d == 0) {
            return bad("stage channels and depths must be positive".into());
        }
        if self.stage_channels.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("stage_channels must be non-decreasing, got {:?}", self.stage_channels));
        }
        for &c in &self.stage_channels {
            let h = cwsa_heads(c);
            if c % h != 0 || (c / 2) % (h / 2) != 0 {
                return bad(format!("stage width {c} does not split into {h} attention heads"));
            }
        }
        let levels = self
            .qco_levels
            .iter()
            .chain(self.tam_branch_levels.iter().flatten());
        if let Some(n) = levels.clone().find(|&&n| n < 2) {
            return bad(format!("quantization levels must be at least 2, got {n}"));
        }
        if self.pasppm_pools.iter().any(|k| k % 2 == 0) {
            return bad(format!("pasppm_pools must be odd, got {:?}", self.pasppm_pools));
        }
        if self.pasppm_dilations.contains(&0) || self.pasppm_width == Some(0) {
            return bad("pasppm dilations and width must be positive".into());
        }
        Ok(())
    }

    pub fn stripe_widths(&self) -> [usize; 4] {
        [self.stripe_width; 4]
    }

    pub fn tam_config(&self, stage: usize) -> TamConfig {
        TamConfig {
            levels: self.qco_levels[stage.min(1)],
            qco_width: self.qco_width,
            branch_levels: self.tam_branch_levels,
            upsampler: self.upsampler,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            channels: self.decoder_channels,
            in_channels: self.stage_channels,
            pasppm_pools: self.pasppm_pools,
            pasppm_dilations: self.pasppm_dilations,
            pasppm_width: self.pasppm_width,
            bias: self.decoder_bias,
            upsampler: self.upsampler,
            pasppm: self.components.pasppm,
            dam: self.components.dam,
            edge: self.components.egffm,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            channels: self.decoder_channels,
            bias: self.decoder_bias,
            upsampler: self.upsampler,
            enabled: self.components.egffm,
            edge_operand: self.edge_operand,
        }
    }
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub pyramid: PyramidFeatures,
    pub bundle: DecoderBundle,
    pub fused: FeatureMap,
    pub output: SegmentationOutput,
}

#[derive(Clone, Debug)]
pub struct Teformer {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: Eg3Head,
    fusion: Egffm,
    head: SegmentHead,
}

impl Teformer {
    pub fn new(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        Self::with_store(cfg, ParamStore::new(dtype, Device::Cpu, cfg.seed))
    }

    /// Forward-only model; see [`ParamStore::inference`].
    pub fn inference(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        Self::with_store(cfg, ParamStore::inference(dtype, Device::Cpu, cfg.seed))
    }

    /// Builds into an empty store.
    pub fn with_store(cfg: &ModelConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        if !store.is_empty() {
            return Err(Error::Config("model must be built into an empty parameter store".into()));
        }
        let root = store.root();
        Ok(Self {
            encoder: Encoder::new(&root, cfg)?,
            decoder: Eg3Head::new(&root.pp("decoder"), &cfg.decoder_config())?,
            fusion: Egffm::new(&root.pp("fusion"), &cfg.fusion_config())?,
            head: SegmentHead::new(
                &root.pp("head"),
                cfg.stage_channels[0],
                cfg.decoder_channels,
                cfg.num_classes,
                cfg.upsampler,
            )?,
            cfg: cfg.clone(),
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Eg3Head {
        &self.decoder
    }

    pub fn fusion(&self) -> &Egffm {
        &self.fusion
    }

    pub fn head(&self) -> &SegmentHead {
        &self.head
    }

    /// Wraps a `(B, C, H, W)` image tensor, casting to the model dtype.
    pub fn image(&self, x: &Tensor) -> Result<FeatureMap> {
        FeatureMap::new(x.to_dtype(self.store.dtype())?, 1)
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<SegmentationOutput> {
        Ok(self.trace(image)?.output)
    }

    pub fn trace(&self, image: &FeatureMap) -> Result<ForwardTrace> {
        let pyramid = self.encoder.forward(image)?;
        let bundle = self.decoder.forward(&pyramid)?;
        self.finish(pyramid, bundle, GateProbe::None)
    }

    /// Runs fusion and head on an externally supplied bundle.
    pub fn finish(&self, pyramid: PyramidFeatures, bundle: DecoderBundle, probe: GateProbe) -> Result<ForwardTrace> {
        let fused = self.fusion.forward_probed(&bundle, probe)?;
        let output = self.head.forward(&fused, &pyramid.e1)?;
        Ok(ForwardTrace {
            pyramid,
            bundle,
            fused,
            output,
        })
    }
}
