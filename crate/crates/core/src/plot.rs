//! Minimal static charts (no text): a line plot for loss curves and a bar
//! chart for per-class or per-row scores.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::Result;

const W: u32 = 640;
const H: u32 = 360;
const MARGIN: u32 = 24;
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    for x in MARGIN..W - MARGIN {
        img.put_pixel(x, H - MARGIN, AXIS);
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, AXIS);
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn y_of(v: f64, lo: f64, hi: f64) -> i64 {
    let span = (hi - lo).max(1e-12);
    let t = ((v - lo) / span).clamp(0.0, 1.0);
    (H - MARGIN) as i64 - (t * (H - 2 * MARGIN) as f64).round() as i64
}

/// Raw values in light gray, the smoothed series in blue.
pub fn loss_curve_png(raw: &[f64], smoothed: &[f64], path: &Path) -> Result<()> {
    let mut img = canvas();
    let finite = raw.iter().chain(smoothed).copied().filter(|v| v.is_finite());
    let hi = finite.clone().fold(f64::MIN, f64::max);
    let lo = finite.fold(f64::MAX, f64::min).min(0.0);
    let n = raw.len().max(2);
    let x_of = |i: usize| MARGIN as i64 + (i as f64 / (n - 1) as f64 * (W - 2 * MARGIN) as f64).round() as i64;
    for (series, color) in [(raw, Rgb([190, 190, 190])), (smoothed, Rgb([30, 90, 200]))] {
        for (i, pair) in series.windows(2).enumerate() {
            line(&mut img, (x_of(i), y_of(pair[0], lo, hi)), (x_of(i + 1), y_of(pair[1], lo, hi)), color);
        }
    }
    img.save(path)?;
    Ok(())
}

/// One bar per value on a fixed `[0, 1]` scale; missing values leave a gap.
pub fn bar_chart_png(values: &[Option<f64>], path: &Path) -> Result<()> {
    let mut img = canvas();
    let n = values.len().max(1) as u32;
    let slot = (W - 2 * MARGIN) / n;
    let bar = (slot * 2 / 3).max(1);
    for (i, v) in values.iter().enumerate() {
        let Some(v) = v else { continue };
        let top = y_of(*v, 0.0, 1.0) as u32;
        let x0 = MARGIN + 1 + i as u32 * slot + (slot - bar) / 2;
        for x in x0..(x0 + bar).min(W - MARGIN) {
            for y in top..H - MARGIN {
                img.put_pixel(x, y, Rgb([70, 150, 90]));
            }
        }
    }
    img.save(path)?;
    Ok(())
}
