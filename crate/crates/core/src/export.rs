//! Prediction images, probability rasters and `metrics.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{Palette, Sample};
use crate::metrics::MetricsReport;
use crate::model::Teformer;
use crate::{Error, Result};

/// Writes `<id>_pred.png` (palette colors) and `<id>_ids.png` (raw ids).
pub fn emit_prediction(
    id: &str,
    class_map: &[u32],
    width: usize,
    height: usize,
    palette: &Palette,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = class_map
        .iter()
        .map(|&c| {
            u8::try_from(c).map_err(|_| Error::LabelOutOfRange {
                label: c,
                num_classes: palette.num_classes(),
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let pred = out_dir.join(format!("{id}_pred.png"));
    let ids = out_dir.join(format!("{id}_ids.png"));
    palette.encode(&labels, width, height)?.save(&pred)?;
    GrayImage::from_raw(width as u32, height as u32, labels)
        .ok_or_else(|| Error::Shape(format!("{} labels for {width}x{height}", class_map.len())))?
        .save(&ids)?;
    Ok((pred, ids))
}

/// Little-endian `f32` array in NumPy `.npy` format.
pub fn write_npy_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
    }
    let dims = shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ");
    let tuple = if shape.len() == 1 { format!("({dims},)") } else { format!("({dims})") };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {tuple}, }}");
    // magic (6) + version (2) + length (2) + header, padded to 64 with a newline
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(10 + header.len() + 4 * data.len());
    buf.extend_from_slice(b"\x93NUMPY\x01\x00");
    buf.extend_from_slice(&(header.len() as u16).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads an RGB raster as a sample with an all-ignore mask.
pub fn read_image(path: &Path, ignore_index: u8) -> Result<Sample> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    Ok(Sample {
        id,
        width: w,
        height: h,
        image: img.into_raw(),
        mask: vec![ignore_index; w * h],
    })
}

/// Replicate-pads a sample on the right and bottom to multiples of `m`.
pub fn pad_to_multiple(s: &Sample, m: usize) -> Sample {
    let (w, h) = (s.width.div_ceil(m) * m, s.height.div_ceil(m) * m);
    if (w, h) == (s.width, s.height) {
        return s.clone();
    }
    let mut image = Vec::with_capacity(3 * w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y.min(s.height - 1) * s.width + x.min(s.width - 1);
            image.extend_from_slice(&s.image[3 * i..3 * i + 3]);
            mask.push(s.mask[i]);
        }
    }
    Sample {
        id: s.id.clone(),
        width: w,
        height: h,
        image,
        mask,
    }
}

/// Class map `(H·W)` and probabilities `(K, H, W)` for one image of any size.
pub fn predict_image(model: &Teformer, s: &Sample) -> Result<(Vec<u32>, Tensor)> {
    let padded = pad_to_multiple(s, 32);
    let store = model.store();
    let (images, _) = crate::data::batch_tensors(&[&padded], store.dtype(), store.device())?;
    let out = model.forward(&model.image(&images)?)?;
    let probs = out
        .probabilities()?
        .get(0)?
        .narrow(1, 0, s.height)?
        .narrow(2, 0, s.width)?
        .to_dtype(DType::F32)?;
    let map = probs.argmax(0)?.to_dtype(DType::U32)?.flatten_all()?.to_vec1::<u32>()?;
    Ok((map, probs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub iou: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_hash: String,
    pub seed: u64,
    pub per_class: PerClass,
    pub miou: f64,
    pub mf1: f64,
    pub pa: f64,
    pub boundary_f1: Option<f64>,
    pub params: u64,
    pub flops: u64,
    pub wall_time_s: f64,
}

impl MetricsFile {
    pub fn new(r: &MetricsReport, config_hash: String, seed: u64, params: u64, flops: u64, wall_time_s: f64) -> Self {
        Self {
            config_hash,
            seed,
            per_class: PerClass {
                iou: r.iou.clone(),
                f1: r.f1.clone(),
            },
            miou: r.miou,
            mf1: r.mf1,
            pa: r.pa,
            boundary_f1: r.boundary_f1,
            params,
            flops,
            wall_time_s,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Decodes a colorized prediction back to ids.
pub fn decode_prediction(path: &Path, palette: &Palette) -> Result<Vec<u8>> {
    let img: RgbImage = image::open(path)?.to_rgb8();
    Ok(palette.decode(&img).0)
}
