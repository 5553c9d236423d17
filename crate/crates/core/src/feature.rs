//! Dense activation maps that remember their stride relative to the input image.

use candle_core::{DType, Tensor};

use crate::{Error, Result};

/// A `(batch, channels, height, width)` activation tensor at a known stride.
///
/// The stride is the number of input-image pixels covered by one feature cell
/// along each axis. It is always a power of two.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    data: Tensor,
    stride: usize,
}

impl FeatureMap {
    pub fn new(data: Tensor, stride: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::Shape(format!(
                "feature map must be rank 4 (B, C, H, W), got {:?}",
                data.dims()
            )));
        }
        if stride == 0 || !stride.is_power_of_two() {
            return Err(Error::Config(format!(
                "feature stride must be a power of two, got {stride}"
            )));
        }
        let (_, _, h, w) = data.dims4()?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("feature map has an empty spatial axis".into()));
        }
        Ok(Self { data, stride })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dims();
        (d[0], d[1], d[2], d[3])
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.data.dims();
        (d[2], d[3])
    }

    /// Same stride, new data. Used by shape-preserving operations.
    pub fn with_data(&self, data: Tensor) -> Result<Self> {
        Self::new(data, self.stride)
    }

    /// True when no entry is NaN or infinite.
    pub fn is_finite(&self) -> Result<bool> {
        all_finite(&self.data)
    }
}

pub(crate) fn all_finite(t: &Tensor) -> Result<bool> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn rejects_bad_rank_and_stride() {
        let t = Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(FeatureMap::new(t, 1).is_err());
        let t = Tensor::zeros((1, 2, 3, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(FeatureMap::new(t.clone(), 3).is_err());
        assert!(FeatureMap::new(t.clone(), 0).is_err());
        let fm = FeatureMap::new(t, 8).unwrap();
        assert_eq!(fm.dims(), (1, 2, 3, 3));
        assert!(fm.is_finite().unwrap());
    }

    #[test]
    fn detects_non_finite_entries() {
        let t = Tensor::new(&[1f32, f32::NAN, 0.0, 2.0], &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 2, 2))
            .unwrap();
        let fm = FeatureMap::new(t, 4).unwrap();
        assert!(!fm.is_finite().unwrap());
    }
}
