use std::collections::HashMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Class id → RGB color, plus the color used to paint ignored pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
    pub ignore_index: u8,
    pub ignore_color: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self::isprs()
    }
}

impl Palette {
    /// Impervious surfaces, building, low vegetation, tree, car, clutter.
    pub fn isprs() -> Self {
        Self {
            colors: vec![
                [255, 255, 255],
                [0, 0, 255],
                [0, 255, 255],
                [0, 255, 0],
                [255, 255, 0],
                [255, 0, 0],
            ],
            ignore_index: super::DEFAULT_IGNORE_INDEX,
            ignore_color: [0, 0, 0],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.colors.len()
    }

    /// Keeps the first `k` colors.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.colors.len() {
            return Err(Error::Config(format!(
                "palette has {} colors, {k} classes requested",
                self.colors.len()
            )));
        }
        Ok(Self {
            colors: self.colors[..k].to_vec(),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, c) in self.colors.iter().chain([&self.ignore_color]).enumerate() {
            if let Some(j) = seen.insert(*c, i) {
                return Err(Error::Config(format!(
                    "palette color {c:?} used by entries {j} and {i}"
                )));
            }
        }
        if (self.ignore_index as usize) < self.colors.len() {
            return Err(Error::Config(format!(
                "ignore index {} collides with a class id",
                self.ignore_index
            )));
        }
        Ok(())
    }

    pub fn color(&self, label: u8) -> Result<[u8; 3]> {
        if label == self.ignore_index {
            return Ok(self.ignore_color);
        }
        self.colors
            .get(label as usize)
            .copied()
            .ok_or(Error::LabelOutOfRange {
                label: label as u32,
                num_classes: self.colors.len(),
            })
    }

    pub fn encode(&self, mask: &[u8], width: usize, height: usize) -> Result<RgbImage> {
        if mask.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} raster",
                mask.len()
            )));
        }
        let mut raw = Vec::with_capacity(3 * mask.len());
        for &m in mask {
            raw.extend(self.color(m)?);
        }
        Ok(RgbImage::from_raw(width as u32, height as u32, raw).expect("sized buffer"))
    }

    /// Maps colors to class ids. Unknown colors become the ignore index; their
    /// count is returned alongside the labels.
    pub fn decode(&self, rgb: &RgbImage) -> (Vec<u8>, usize) {
        let lookup: HashMap<[u8; 3], u8> = self
            .colors
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i as u8))
            .chain([(self.ignore_color, self.ignore_index)])
            .collect();
        let mut unknown = 0;
        let labels = rgb
            .pixels()
            .map(|p| {
                lookup.get(&p.0).copied().unwrap_or_else(|| {
                    unknown += 1;
                    self.ignore_index
                })
            })
            .collect();
        (labels, unknown)
    }
}
