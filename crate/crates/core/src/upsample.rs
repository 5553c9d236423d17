//! Content-aware upsampling (`dys`) and stride/channel alignment.
//!
//! The dynamic upsampler predicts, for every output pixel, a 2-D offset that
//! nudges its bilinear sampling position in the source map. Offsets are
//! `0.25 · tanh(raw)` source cells, so they never exceed a quarter cell. With
//! zero offsets the operator is plain bilinear interpolation
//! (half-pixel centers, edge clamped).

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::complexity::add_macs;
use crate::feature::FeatureMap;
use crate::nn::{avg_pool_down, Conv2d, ConvConfig};
use crate::params::{Init, Scope};
use crate::{Error, Result};

/// Largest offset magnitude, in source cells.
pub const MAX_OFFSET: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Dynamic,
    Bilinear,
}

/// `dys`: learned point-sampling upsampler for one fixed scale.
#[derive(Clone, Debug)]
pub struct DynamicUpsampler {
    scale: usize,
    predictor: Option<Conv2d>,
}

impl DynamicUpsampler {
    pub fn new(scope: &Scope, channels: usize, scale: usize, mode: UpsampleMode) -> Result<Self> {
        check_scale(scale)?;
        let predictor = match mode {
            UpsampleMode::Bilinear => None,
            UpsampleMode::Dynamic => Some(Conv2d::with_init(
                &scope.pp("offset"),
                channels,
                2 * scale * scale,
                ConvConfig::pointwise(),
                Init::Normal { std: 1e-3 },
            )?),
        };
        Ok(Self { scale, predictor })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn mode(&self) -> UpsampleMode {
        if self.predictor.is_some() {
            UpsampleMode::Dynamic
        } else {
            UpsampleMode::Bilinear
        }
    }

    /// Predicted offsets `(B, 2, sH, sW)` in source cells (`[dy, dx]`), or
    /// `None` in bilinear mode.
    pub fn offsets(&self, x: &Tensor) -> Result<Option<Tensor>> {
        let Some(predictor) = &self.predictor else {
            return Ok(None);
        };
        let (b, _, h, w) = x.dims4()?;
        let s = self.scale;
        let raw = predictor.forward(x)?;
        // pixel shuffle: channel (comp, a, b) → output pixel (i·s + a, j·s + b)
        let raw = raw
            .reshape((b, 2, s, s, h, w))?
            .permute((0, 1, 4, 2, 5, 3))?
            .reshape((b, 2, h * s, w * s))?;
        Ok(Some((raw.tanh()? * MAX_OFFSET)?))
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.stride() % self.scale != 0 {
            return Err(Error::Config(format!(
                "cannot upsample stride {} by {}",
                x.stride(),
                self.scale
            )));
        }
        let offsets = self.offsets(x.tensor())?;
        let y = point_sample(x.tensor(), self.scale, offsets.as_ref())?;
        FeatureMap::new(y, x.stride() / self.scale)
    }
}

fn check_scale(scale: usize) -> Result<()> {
    if matches!(scale, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "upsampling scale must be 2, 4 or 8, got {scale}"
        )))
    }
}

/// Bilinear upsampling by an integer factor.
pub fn bilinear_upsample(x: &Tensor, scale: usize) -> Result<Tensor> {
    point_sample(x, scale, None)
}

/// Samples `x` on the `scale`-times finer grid, displaced by `offsets`.
///
/// Output pixel `(i, j)` reads source position
/// `((i + 0.5)/scale − 0.5 + dy, (j + 0.5)/scale − 0.5 + dx)`, clamped to the
/// source extent, with bilinear weights.
pub fn point_sample(x: &Tensor, scale: usize, offsets: Option<&Tensor>) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h * scale, w * scale);
    let dev = x.device();
    let dtype = x.dtype();
    let base = |n: usize| -> Vec<f64> {
        (0..n * scale)
            .map(|i| (i as f64 + 0.5) / scale as f64 - 0.5)
            .collect()
    };
    let ys = Tensor::from_vec(base(h), (1, 1, oh, 1), dev)?.to_dtype(dtype)?;
    let xs = Tensor::from_vec(base(w), (1, 1, 1, ow), dev)?.to_dtype(dtype)?;
    let (py, px) = match offsets {
        Some(off) => {
            if off.dims() != [b, 2, oh, ow] {
                return Err(Error::Shape(format!(
                    "offsets {:?} do not match output ({b}, 2, {oh}, {ow})",
                    off.dims()
                )));
            }
            (
                off.narrow(1, 0, 1)?.broadcast_add(&ys)?,
                off.narrow(1, 1, 1)?.broadcast_add(&xs)?,
            )
        }
        None => (
            ys.broadcast_as((b, 1, oh, ow))?.contiguous()?,
            xs.broadcast_as((b, 1, oh, ow))?.contiguous()?,
        ),
    };
    let py = py.clamp(0.0, (h - 1) as f64)?;
    let px = px.clamp(0.0, (w - 1) as f64)?;
    let y0 = py.detach().floor()?;
    let x0 = px.detach().floor()?;
    let wy = (&py - &y0)?;
    let wx = (&px - &x0)?;
    let y1 = (&y0 + 1.0)?.clamp(0.0, (h - 1) as f64)?;
    let x1 = (&x0 + 1.0)?.clamp(0.0, (w - 1) as f64)?;

    let flat = x.reshape((b, c, h * w))?;
    let gather = |yy: &Tensor, xx: &Tensor| -> Result<Tensor> {
        let idx = ((yy * w as f64)? + xx)?
            .to_dtype(DType::F64)?
            .to_dtype(DType::U32)?
            .reshape((b, 1, oh * ow))?
            .broadcast_as((b, c, oh * ow))?
            .contiguous()?;
        Ok(flat.gather(&idx, 2)?.reshape((b, c, oh, ow))?)
    };
    let v00 = gather(&y0, &x0)?;
    let v01 = gather(&y0, &x1)?;
    let v10 = gather(&y1, &x0)?;
    let v11 = gather(&y1, &x1)?;
    let one_wy = wy.affine(-1.0, 1.0)?;
    let one_wx = wx.affine(-1.0, 1.0)?;
    let top = (v00.broadcast_mul(&one_wx)? + v01.broadcast_mul(&wx)?)?;
    let bottom = (v10.broadcast_mul(&one_wx)? + v11.broadcast_mul(&wx)?)?;
    add_macs((4 * b * c * oh * ow) as u64);
    Ok((top.broadcast_mul(&one_wy)? + bottom.broadcast_mul(&wy)?)?)
}

/// Moves a map to a target stride and channel width: average pooling to go
/// coarser, `dys` to go finer, then an optional 1×1 projection.
#[derive(Clone, Debug)]
pub struct Align {
    in_stride: usize,
    target_stride: usize,
    up: Option<DynamicUpsampler>,
    proj: Option<Conv2d>,
}

impl Align {
    pub fn new(
        scope: &Scope,
        in_channels: usize,
        in_stride: usize,
        target_stride: usize,
        target_channels: usize,
        project: bool,
        bias: bool,
        mode: UpsampleMode,
    ) -> Result<Self> {
        let reachable = in_stride.is_power_of_two()
            && target_stride.is_power_of_two()
            && (target_stride >= in_stride || check_scale(in_stride / target_stride).is_ok());
        if !reachable {
            return Err(Error::Config(format!(
                "stride {in_stride} cannot be aligned to {target_stride}"
            )));
        }
        let up = if target_stride < in_stride {
            Some(DynamicUpsampler::new(
                &scope.pp("up"),
                in_channels,
                in_stride / target_stride,
                mode,
            )?)
        } else {
            None
        };
        if !project && in_channels != target_channels {
            return Err(Error::Config(format!(
                "changing channels {in_channels} → {target_channels} needs a projection"
            )));
        }
        let proj = if project {
            Some(Conv2d::new(
                &scope.pp("proj"),
                in_channels,
                target_channels,
                ConvConfig::pointwise().bias(bias),
            )?)
        } else {
            None
        };
        Ok(Self {
            in_stride,
            target_stride,
            up,
            proj,
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.stride() != self.in_stride {
            return Err(Error::Shape(format!(
                "align expects stride {}, got {}",
                self.in_stride,
                x.stride()
            )));
        }
        let moved = if let Some(up) = &self.up {
            up.forward(x)?
        } else if self.target_stride > self.in_stride {
            let t = avg_pool_down(x.tensor(), self.target_stride / self.in_stride)?;
            FeatureMap::new(t, self.target_stride)?
        } else {
            x.clone()
        };
        match &self.proj {
            Some(p) => moved.with_data(p.forward(moved.tensor())?),
            None => Ok(moved),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::Device;

    /// Scalar bilinear interpolation at half-pixel centers with edge clamping.
    fn oracle(src: &[Vec<f64>], scale: usize) -> Vec<Vec<f64>> {
        let h = src.len();
        let w = src[0].len();
        let mut out = vec![vec![0.0; w * scale]; h * scale];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let y = ((i as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                let x = ((j as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                *v = src[y0][x0] * (1.0 - fy) * (1.0 - fx)
                    + src[y0][x1] * (1.0 - fy) * fx
                    + src[y1][x0] * fy * (1.0 - fx)
                    + src[y1][x1] * fy * fx;
            }
        }
        out
    }

    #[test]
    fn two_by_two_matches_scalar_oracle() {
        let src = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let x = Tensor::new(&[1f64, 2.0, 3.0, 4.0], &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 2, 2))
            .unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        let got = y.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let want = oracle(&src, 2);
        // corner stays, interior blends: row 1 = (1.5, 1.75, 2.25, 2.5)
        assert_eq!(want[1], vec![1.5, 1.75, 2.25, 2.5]);
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn shape_and_stride_follow_scale() {
        let store = ParamStore::cpu(DType::F32, 0);
        let up = DynamicUpsampler::new(&store.root(), 3, 4, UpsampleMode::Dynamic).unwrap();
        let x = FeatureMap::new(Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap(), 32)
            .unwrap();
        let y = up.forward(&x).unwrap();
        assert_eq!(y.dims(), (1, 3, 32, 32));
        assert_eq!(y.stride(), 8);
        let bad = FeatureMap::new(Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap(), 2)
            .unwrap();
        assert!(matches!(up.forward(&bad), Err(Error::Config(_))));
        assert!(DynamicUpsampler::new(&store.root().pp("z"), 3, 3, UpsampleMode::Dynamic).is_err());
    }

    #[test]
    fn constant_map_stays_constant_for_any_offsets() {
        let store = ParamStore::cpu(DType::F64, 11);
        let up = DynamicUpsampler::new(&store.root(), 2, 2, UpsampleMode::Dynamic).unwrap();
        // Large predictor weights saturate the offsets at ±0.25.
        store
            .set(
                "offset.weight",
                &(store.get("offset.weight").unwrap().as_tensor() * 1e4).unwrap(),
            )
            .unwrap();
        let x = (Tensor::ones((1, 2, 3, 5), DType::F64, &Device::Cpu).unwrap() * 3.0).unwrap();
        let y = up
            .forward(&FeatureMap::new(x, 4).unwrap())
            .unwrap()
            .into_tensor();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|a| (a - 3.0).abs() < 1e-12));
    }

    #[test]
    fn offsets_are_bounded() {
        let store = ParamStore::cpu(DType::F64, 5);
        let up = DynamicUpsampler::new(&store.root(), 2, 4, UpsampleMode::Dynamic).unwrap();
        store
            .set(
                "offset.weight",
                &(store.get("offset.weight").unwrap().as_tensor() * 1e6).unwrap(),
            )
            .unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 2, 3, 3), &Device::Cpu).unwrap();
        let off = up.offsets(&x).unwrap().unwrap();
        let m = off.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(m <= MAX_OFFSET);
    }

    #[test]
    fn align_paths() {
        let store = ParamStore::cpu(DType::F32, 0);
        let root = store.root();
        let x4 = FeatureMap::new(Tensor::ones((1, 4, 16, 16), DType::F32, &Device::Cpu).unwrap(), 4)
            .unwrap();
        let down = Align::new(&root.pp("a"), 4, 4, 8, 6, true, true, UpsampleMode::Dynamic).unwrap();
        let y = down.forward(&x4).unwrap();
        assert_eq!((y.dims(), y.stride()), ((1, 6, 8, 8), 8));

        let x32 = FeatureMap::new(Tensor::ones((1, 4, 2, 2), DType::F32, &Device::Cpu).unwrap(), 32)
            .unwrap();
        let up = Align::new(&root.pp("b"), 4, 32, 8, 6, true, true, UpsampleMode::Dynamic).unwrap();
        let y = up.forward(&x32).unwrap();
        assert_eq!((y.dims(), y.stride()), ((1, 6, 8, 8), 8));

        let id = Align::new(&root.pp("c"), 4, 4, 4, 4, false, true, UpsampleMode::Dynamic).unwrap();
        let y = id.forward(&x4).unwrap();
        assert_eq!(y.tensor().id(), x4.tensor().id());

        assert!(Align::new(&root.pp("d"), 4, 32, 1, 4, true, true, UpsampleMode::Dynamic).is_err());
        assert!(Align::new(&root.pp("e"), 4, 4, 4, 8, false, true, UpsampleMode::Dynamic).is_err());
    }
}
