//! Scenes of rectangles and ellipses whose classes share shapes and color
//! statistics and differ only in texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::Sample;
use crate::{Error, Result};

/// Texture of a foreground class; class `k ≥ 1` uses `SYNTHETIC_TEXTURES[k-1]`.
/// Consecutive entries form pairs that differ in one texture attribute.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    Stripes { horizontal: bool, period: usize },
    Checker { cell: usize },
    Noise { sigma: f64 },
}

pub const SYNTHETIC_TEXTURES: [Texture; 6] = [
    Texture::Stripes { horizontal: true, period: 4 },
    Texture::Stripes { horizontal: false, period: 4 },
    Texture::Checker { cell: 8 },
    Texture::Checker { cell: 2 },
    Texture::Noise { sigma: 12.0 },
    Texture::Noise { sigma: 48.0 },
];

const AMPLITUDE: f64 = 50.0;
const BACKGROUND_SIGMA: f64 = 3.0;
const MAX_ATTEMPTS: usize = 64;

impl Texture {
    /// Signed intensity offset at `(x, y)` for an object with phase `(px, py)`.
    pub fn value(&self, x: usize, y: usize, phase: (usize, usize), noise: &mut impl FnMut() -> f64) -> f64 {
        let (x, y) = (x + phase.0, y + phase.1);
        match *self {
            Texture::Stripes { horizontal, period } => {
                let t = if horizontal { y } else { x };
                if (t % period) < period / 2 {
                    AMPLITUDE
                } else {
                    -AMPLITUDE
                }
            }
            Texture::Checker { cell } => {
                if ((x / cell) + (y / cell)) % 2 == 0 {
                    AMPLITUDE
                } else {
                    -AMPLITUDE
                }
            }
            Texture::Noise { sigma } => sigma * noise(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, size: usize) -> Shape {
        let s = size as f64;
        let w = rng.gen_range(0.25 * s..0.6 * s);
        let h = rng.gen_range(0.25 * s..0.6 * s);
        let x0 = rng.gen_range(0.0..s - w);
        let y0 = rng.gen_range(0.0..s - h);
        if rng.gen_bool(0.5) {
            Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
        } else {
            Shape::Ellipse {
                cx: x0 + w / 2.0,
                cy: y0 + h / 2.0,
                rx: w / 2.0,
                ry: h / 2.0,
            }
        }
    }
}

fn render(rng: &mut ChaCha8Rng, id: String, size: usize, num_classes: usize) -> Sample {
    let n = size * size;
    let std = Normal::new(0.0, 1.0).unwrap();
    let base: f64 = rng.gen_range(90.0..166.0);
    let mut noise = || std.sample(rng);
    let mut offset: Vec<f64> = (0..n).map(|_| BACKGROUND_SIGMA * noise()).collect();
    let mut gray = vec![base; n];
    let mut tint = vec![[0.0f64; 3]; n];
    let mut mask = vec![0u8; n];
    let objects = rng.gen_range(2..=4);
    for _ in 0..objects {
        let class = rng.gen_range(1..num_classes);
        let texture = SYNTHETIC_TEXTURES[class - 1];
        let shape = Shape::random(rng, size);
        let phase = (rng.gen_range(0..8), rng.gen_range(0..8));
        // brightness and tint drawn independently of the class
        let obj_base: f64 = rng.gen_range(90.0..166.0);
        let obj_tint = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x, y) {
                    let i = y * size + x;
                    let mut noise = || std.sample(rng);
                    offset[i] = texture.value(x, y, phase, &mut noise);
                    gray[i] = obj_base;
                    tint[i] = obj_tint;
                    mask[i] = class as u8;
                }
            }
        }
    }
    let mut image = Vec::with_capacity(3 * n);
    for i in 0..n {
        for t in tint[i] {
            image.push((gray[i] + offset[i] + t).round().clamp(0.0, 255.0) as u8);
        }
    }
    Sample {
        id,
        width: size,
        height: size,
        image,
        mask,
    }
}

/// Sample `index` of the synthetic set for `seed`. Scenes are redrawn until
/// the mask holds at least two classes.
pub fn synthetic_sample(seed: u64, index: usize, size: usize, num_classes: usize) -> Result<Sample> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Config(format!("synthetic size must be a positive multiple of 32, got {size}")));
    }
    if !(2..=SYNTHETIC_TEXTURES.len() + 1).contains(&num_classes) {
        return Err(Error::Config(format!(
            "synthetic set supports 2..={} classes, got {num_classes}",
            SYNTHETIC_TEXTURES.len() + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let id = format!("syn{seed}_{index:05}");
    for _ in 0..MAX_ATTEMPTS {
        let s = render(&mut rng, id.clone(), size, num_classes);
        if s.distinct_labels() >= 2 {
            return Ok(s);
        }
    }
    Err(Error::Data(format!("could not draw a two-class scene for {id}")))
}

pub fn gen_synthetic(count: usize, size: usize, num_classes: usize, seed: u64) -> Result<Vec<Sample>> {
    super::worker_pool().install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| synthetic_sample(seed, i, size, num_classes))
            .collect()
    })
}
