use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Palette, Sample};
use crate::{Error, Result};

const RASTER_EXTENSIONS: [&str; 4] = ["png", "tif", "tiff", "PNG"];

/// Window offsets along one axis. The last window is shifted back so it ends
/// exactly at the raster edge.
pub fn tile_windows(len: usize, tile: usize, stride: usize) -> Result<Vec<usize>> {
    if tile == 0 || stride == 0 {
        return Err(Error::Config("tile and stride must be positive".into()));
    }
    if tile > len {
        return Err(Error::Data(format!("tile {tile} exceeds raster side {len}")));
    }
    let mut offsets: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < len).collect();
    offsets.push(len - tile);
    Ok(offsets)
}

fn rasters(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !RASTER_EXTENSIONS.contains(&ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pairs images and labels by file stem and cuts both into windows.
pub fn load_tiles(
    image_dir: &Path,
    label_dir: &Path,
    tile: usize,
    stride: usize,
    palette: &Palette,
) -> Result<Vec<Sample>> {
    palette.validate()?;
    let images = rasters(image_dir)?;
    let labels = rasters(label_dir)?;
    if let Some(stem) = images.keys().find(|k| !labels.contains_key(*k)) {
        return Err(Error::Data(format!("image `{stem}` has no label raster")));
    }
    if let Some(stem) = labels.keys().find(|k| !images.contains_key(*k)) {
        return Err(Error::Data(format!("label `{stem}` has no image raster")));
    }
    let mut out = Vec::new();
    for (stem, image_path) in &images {
        let img = image::open(image_path)?.to_rgb8();
        let lbl = image::open(&labels[stem])?.to_rgb8();
        if img.dimensions() != lbl.dimensions() {
            return Err(Error::Data(format!(
                "`{stem}`: image {:?} and label {:?} differ in size",
                img.dimensions(),
                lbl.dimensions()
            )));
        }
        let (mask, unknown) = palette.decode(&lbl);
        let (w, h) = (img.width() as usize, img.height() as usize);
        if 2 * unknown > w * h {
            return Err(Error::Data(format!(
                "`{stem}`: {unknown} of {} label pixels match no palette color",
                w * h
            )));
        }
        if unknown > 0 {
            log::warn!("`{stem}`: {unknown} label pixels with unknown colors set to ignore");
        }
        let raw = img.into_raw();
        for &y0 in &tile_windows(h, tile, stride)? {
            for &x0 in &tile_windows(w, tile, stride)? {
                let mut image = Vec::with_capacity(3 * tile * tile);
                let mut m = Vec::with_capacity(tile * tile);
                for y in y0..y0 + tile {
                    let row = y * w;
                    image.extend_from_slice(&raw[3 * (row + x0)..3 * (row + x0 + tile)]);
                    m.extend_from_slice(&mask[row + x0..row + x0 + tile]);
                }
                out.push(Sample {
                    id: format!("{stem}_{y0}_{x0}"),
                    width: tile,
                    height: tile,
                    image,
                    mask: m,
                });
            }
        }
    }
    Ok(out)
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
