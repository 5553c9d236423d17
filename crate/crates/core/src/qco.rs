//! Quantization and counting operator (QCO).
//!
//! For each image in the batch:
//!
//! 1. every pixel feature is compared with the spatial mean feature by cosine
//!    similarity, giving a field `s ∈ [-1, 1]^{H·W}`;
//! 2. `s` is softly assigned to `N` uniformly spaced levels on `[-1, 1]` with
//!    a triangular kernel one level spacing wide (encoding matrix `B`);
//! 3. the column means of `B` are the level counts;
//! 4. a shared MLP lifts each `(level, count)` pair to a counting feature row
//!    of `A`;
//! 5. a convolution along the level axis and scaled dot-product attention
//!    between levels produce the adjacency `D` and updated levels `L' = D·Ã`;
//! 6. level features are projected back onto pixels through `B`.

use candle_core::{DType, Tensor};

use crate::feature::FeatureMap;
use crate::nn::{gelu, softmax_last, LevelConv, Linear};
use crate::params::Scope;
use crate::{Error, Result};

/// Level centers `L_n = −1 + 2n/(N−1)`.
pub fn quantization_levels(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("QCO needs at least 2 levels, got {n}")));
    }
    Ok((0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect())
}

/// Level spacing `δ = 2/(N−1)`.
pub fn level_spacing(n: usize) -> f64 {
    2.0 / (n - 1) as f64
}

/// Cosine similarity of each pixel to the spatial mean feature.
#[derive(Clone, Debug)]
pub struct SimilarityField {
    /// `(B, H·W)`.
    pub values: Tensor,
    /// Per batch item: the mean feature vanished, so every `s` is zero.
    pub degenerate: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

const NORM_EPS: f64 = 1e-24;

pub fn similarity_map(x: &Tensor) -> Result<SimilarityField> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let dot = flat.broadcast_mul(&mean)?.sum(1)?;
    let pix_sq = flat.sqr()?.sum(1)?;
    let mean_sq = mean.sqr()?.sum(1)?;
    // s = <x_i, g> / sqrt(|x_i|²|g|² + ε): zero-norm pixels get exactly 0
    let denom = (pix_sq.broadcast_mul(&mean_sq)? + NORM_EPS)?.sqrt()?;
    let values = dot.div(&denom)?.clamp(-1.0, 1.0)?;
    let degenerate = mean_sq
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|m| m <= NORM_EPS)
        .collect::<Vec<_>>();
    if degenerate.iter().any(|&d| d) {
        log::warn!("QCO input has a vanishing mean feature; similarity field is all zero");
    }
    Ok(SimilarityField {
        values,
        degenerate,
        height: h,
        width: w,
    })
}

/// Triangular soft assignment: `B[i, n] = max(0, 1 − |s_i − L_n| / δ)`.
/// Returns `(B, H·W, N)`; every row sums to one.
pub fn soft_quantize(s: &Tensor, n: usize) -> Result<Tensor> {
    let levels = quantization_levels(n)?;
    let delta = level_spacing(n);
    let levels = Tensor::from_vec(levels, (1, 1, n), s.device())?.to_dtype(s.dtype())?;
    probe::record(s, delta)?;
    let diff = s.unsqueeze(2)?.broadcast_sub(&levels)?;
    Ok(diff.abs()?.affine(-1.0 / delta, 1.0)?.relu()?)
}

/// Level occupancy: column means of `B`, `(B, N)`.
pub fn count_levels(b: &Tensor) -> Result<Tensor> {
    Ok(b.mean(1)?)
}

/// Parameter-free QCO statistics of one input.
#[derive(Clone, Debug)]
pub struct QuantStats {
    pub similarity: SimilarityField,
    /// `(B, H·W, N)`.
    pub encoding: Tensor,
    /// `(B, N)`.
    pub counts: Tensor,
    pub levels: Vec<f64>,
}

impl QuantStats {
    pub fn compute(x: &Tensor, n: usize) -> Result<Self> {
        let levels = quantization_levels(n)?;
        let similarity = similarity_map(x)?;
        let encoding = soft_quantize(&similarity.values, n)?;
        let counts = count_levels(&encoding)?;
        Ok(Self {
            similarity,
            encoding,
            counts,
            levels,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Shared two-layer MLP over `(level, count)` pairs → counting feature `A`.
#[derive(Clone, Debug)]
pub struct CountingMlp {
    fc1: Linear,
    fc2: Linear,
}

impl CountingMlp {
    pub fn new(scope: &Scope, width: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), 2, width)?,
            fc2: Linear::new(&scope.pp("fc2"), width, width)?,
        })
    }

    /// `levels`: N values; `counts`: `(B, N)` → `A`: `(B, N, width)`.
    pub fn forward(&self, levels: &[f64], counts: &Tensor) -> Result<Tensor> {
        let (b, n) = counts.dims2()?;
        if levels.len() != n {
            return Err(Error::Shape(format!(
                "{} levels but {n} counts",
                levels.len()
            )));
        }
        let lv = Tensor::from_vec(levels.to_vec(), (1, n, 1), counts.device())?
            .to_dtype(counts.dtype())?
            .broadcast_as((b, n, 1))?;
        let pairs = Tensor::cat(&[&lv, &counts.unsqueeze(2)?], 2)?;
        self.fc2.forward(&gelu(&self.fc1.forward(&pairs)?)?)
    }
}

/// Scaled dot-product attention between levels:
/// `D = softmax(Ã Ãᵀ / √C')` row-wise, `L' = D Ã`. `Ã` is `(B, N, C')`.
pub fn level_attend(a_tilde: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, c) = a_tilde.dims3()?;
    let scores = (a_tilde.matmul(&a_tilde.transpose(1, 2)?.contiguous()?)? / (c as f64).sqrt())?;
    let d = softmax_last(&scores)?;
    let l_prime = d.matmul(a_tilde)?;
    Ok((d, l_prime))
}

/// Level-axis convolution followed by [`level_attend`].
#[derive(Clone, Debug)]
pub struct LevelAttention {
    conv: LevelConv,
}

impl LevelAttention {
    pub fn new(scope: &Scope, width: usize) -> Result<Self> {
        Ok(Self {
            conv: LevelConv::new(&scope.pp("conv"), width, width, 3)?,
        })
    }

    /// Returns `(D, L')`.
    pub fn forward(&self, a: &Tensor) -> Result<(Tensor, Tensor)> {
        level_attend(&self.conv.forward(a)?)
    }
}

/// Blends level features back onto pixels: each pixel becomes the
/// `B`-weighted combination of level rows. `lproj` is `(B, N, C)`, `b` is
/// `(B, H·W, N)`; the result is `(B, C, H, W)`.
pub fn spatial_reproject(lproj: &Tensor, b: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (bl, n, c) = lproj.dims3()?;
    let (bb, hw, nb) = b.dims3()?;
    if bl != bb || n != nb || hw != height * width {
        return Err(Error::Shape(format!(
            "reprojecting levels {:?} through encoding {:?} onto {height}x{width}",
            lproj.dims(),
            b.dims()
        )));
    }
    crate::complexity::add_macs((bl * hw * n * c) as u64);
    Ok(b.matmul(lproj)?
        .transpose(1, 2)?
        .reshape((bl, c, height, width))?)
}

/// Everything QCO produces for one input.
#[derive(Clone, Debug)]
pub struct QuantizationResult {
    pub stats: QuantStats,
    /// Counting feature `(B, N, C_a)`.
    pub counting: Tensor,
    /// Level adjacency `(B, N, N)`.
    pub adjacency: Tensor,
    /// Updated levels `(B, N, C_a)`.
    pub updated_levels: Tensor,
}

/// Parametric part of QCO: counting MLP + level attention.
#[derive(Clone, Debug)]
pub struct Qco {
    mlp: CountingMlp,
    attention: LevelAttention,
    levels: usize,
    width: usize,
}

impl Qco {
    pub fn new(scope: &Scope, levels: usize, width: usize) -> Result<Self> {
        quantization_levels(levels)?;
        Ok(Self {
            mlp: CountingMlp::new(&scope.pp("mlp"), width)?,
            attention: LevelAttention::new(&scope.pp("attn"), width)?,
            levels,
            width,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn counting_feature(&self, stats: &QuantStats) -> Result<Tensor> {
        self.mlp.forward(&stats.levels, &stats.counts)
    }

    /// Runs the parametric stages on precomputed statistics.
    pub fn apply(&self, stats: QuantStats) -> Result<QuantizationResult> {
        if stats.num_levels() != self.levels {
            return Err(Error::Config(format!(
                "statistics have {} levels, operator expects {}",
                stats.num_levels(),
                self.levels
            )));
        }
        let counting = self.counting_feature(&stats)?;
        let (adjacency, updated_levels) = self.attention.forward(&counting)?;
        Ok(QuantizationResult {
            stats,
            counting,
            adjacency,
            updated_levels,
        })
    }

    pub fn quantize(&self, x: &Tensor) -> Result<QuantizationResult> {
        self.apply(QuantStats::compute(x, self.levels)?)
    }

    /// Spatial texture map with `width` channels at the input resolution.
    pub fn spatial(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let stats = QuantStats::compute(x.tensor(), self.levels)?;
        self.spatial_from(stats, x.stride())
    }

    pub fn spatial_from(&self, stats: QuantStats, stride: usize) -> Result<FeatureMap> {
        let (h, w) = (stats.similarity.height, stats.similarity.width);
        let q = self.apply(stats)?;
        let map = spatial_reproject(&q.updated_levels, &q.stats.encoding, h, w)?;
        FeatureMap::new(map, stride)
    }
}

/// Records which triangular-kernel segment every similarity value falls in,
/// so gradient checks can reject finite-difference steps that cross a kink.
///
/// Recording happens only while a [`probe::BinningProbe`] is alive on the
/// current thread.
pub mod probe {
    use std::cell::RefCell;

    use candle_core::{DType, Tensor};

    use crate::Result;

    thread_local! {
        static SIGNATURES: RefCell<Option<Vec<Vec<i64>>>> = const { RefCell::new(None) };
    }

    pub struct BinningProbe {
        previous: Option<Vec<Vec<i64>>>,
    }

    impl BinningProbe {
        pub fn start() -> Self {
            let previous = SIGNATURES.with(|s| s.borrow_mut().replace(Vec::new()));
            Self { previous }
        }

        /// Segment signatures recorded so far, one vector per quantized field.
        pub fn take(&self) -> Vec<Vec<i64>> {
            SIGNATURES.with(|s| s.borrow_mut().as_mut().map(std::mem::take).unwrap_or_default())
        }
    }

    impl Drop for BinningProbe {
        fn drop(&mut self) {
            let prev = self.previous.take();
            SIGNATURES.with(|s| *s.borrow_mut() = prev);
        }
    }

    pub(crate) fn record(values: &Tensor, spacing: f64) -> Result<()> {
        let active = SIGNATURES.with(|s| s.borrow().is_some());
        if !active {
            return Ok(());
        }
        let v = values.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        // Kinks of the triangular kernel (and the clamp to ±1) sit exactly on
        // level centers, so floor((s + 1)/δ) plus an exact-hit marker
        // identifies the smooth piece each value lies on.
        let sig = v
            .iter()
            .map(|&s| {
                let u = (s + 1.0) / spacing;
                let f = u.floor();
                if u == f {
                    -1 - f as i64
                } else {
                    f as i64
                }
            })
            .collect();
        SIGNATURES.with(|s| {
            if let Some(list) = s.borrow_mut().as_mut() {
                list.push(sig);
            }
        });
        Ok(())
    }
}
