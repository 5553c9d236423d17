//! Samples, the synthetic texture set, palette-coded label rasters and tiling.

mod augment;
mod palette;
mod synthetic;
mod tiles;

use std::path::Path;

use candle_core::{DType, Device, Tensor};

pub use augment::{augment, hflip, rot90, vflip, Augmentation};
pub use palette::Palette;
pub use synthetic::{gen_synthetic, synthetic_sample, Texture, SYNTHETIC_TEXTURES};
pub use tiles::{load_tiles, read_manifest, tile_windows, write_manifest};

use crate::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: u8 = 255;

/// An RGB image with its label raster, both row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, `3·width·height` bytes.
    pub image: Vec<u8>,
    /// One label per pixel.
    pub mask: Vec<u8>,
}

impl Sample {
    pub fn validate(&self, num_classes: usize, ignore_index: u8) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 || self.image.len() != 3 * n || self.mask.len() != n {
            return Err(Error::Data(format!(
                "sample `{}`: {}x{} with {} image bytes and {} labels",
                self.id,
                self.width,
                self.height,
                self.image.len(),
                self.mask.len()
            )));
        }
        if let Some(&bad) = self
            .mask
            .iter()
            .find(|&&m| m != ignore_index && m as usize >= num_classes)
        {
            return Err(Error::LabelOutOfRange {
                label: bad as u32,
                num_classes,
            });
        }
        Ok(())
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    pub fn label_histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &m in &self.mask {
            h[m as usize] += 1;
        }
        h
    }

    pub fn distinct_labels(&self) -> usize {
        self.label_histogram().iter().filter(|&&c| c > 0).count()
    }

    pub fn save(&self, image_path: &Path, label_path: &Path, palette: &Palette) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.image.clone())
            .ok_or_else(|| Error::Data(format!("sample `{}` has a malformed buffer", self.id)))?;
        img.save(image_path)?;
        palette.encode(&self.mask, self.width, self.height)?.save(label_path)?;
        Ok(())
    }
}

/// Pixel normalization applied to every image fed to the model.
pub fn normalize(v: u8) -> f32 {
    (v as f32 / 255.0 - 0.5) / 0.25
}

/// Stacks samples of equal size into `(B, 3, H, W)` images and `(B, H, W)`
/// `u32` targets.
pub fn batch_tensors(samples: &[&Sample], dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero samples".into()))?;
    let (w, h) = (first.width, first.height);
    let mut img = Vec::with_capacity(samples.len() * 3 * w * h);
    let mut tgt = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.width, s.height) != (w, h) {
            return Err(Error::Data(format!(
                "batch mixes {}x{} and {}x{} samples",
                w, h, s.width, s.height
            )));
        }
        for c in 0..3 {
            img.extend((0..w * h).map(|p| normalize(s.image[3 * p + c])));
        }
        tgt.extend(s.mask.iter().map(|&m| m as u32));
    }
    let b = samples.len();
    let images = Tensor::from_vec(img, (b, 3, h, w), device)?.to_dtype(dtype)?;
    let targets = Tensor::from_vec(tgt, (b, h, w), device)?;
    Ok((images, targets))
}

/// Number of worker threads for data work: one when
/// `TEFORMER_DETERMINISTIC=1`, otherwise rayon's default.
pub fn worker_pool() -> rayon::ThreadPool {
    let single = std::env::var("TEFORMER_DETERMINISTIC").map(|v| v == "1").unwrap_or(false);
    let mut b = rayon::ThreadPoolBuilder::new();
    if single {
        b = b.num_threads(1);
    }
    b.build().expect("thread pool")
}
