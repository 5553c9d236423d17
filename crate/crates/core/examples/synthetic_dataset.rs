//! Writes a few synthetic texture scenes as PNG pairs and summarizes classes.
//!
//! `cargo run --release --example synthetic_dataset -- [out_dir]`

use std::path::PathBuf;

use teformer::data::{gen_synthetic, Palette, SYNTHETIC_TEXTURES};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("teformer_synth"));
    let (images, labels) = (out.join("images"), out.join("labels"));
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&labels)?;
    for (k, t) in SYNTHETIC_TEXTURES.iter().enumerate().take(4) {
        println!("class {}: {t:?}", k + 1);
    }
    let palette = Palette::isprs().truncated(5)?;
    let samples = gen_synthetic(8, 64, 5, 0)?;
    let mut hist = [0usize; 5];
    for s in &samples {
        let name = format!("{}.png", s.id);
        s.save(&images.join(&name), &labels.join(&name), &palette)?;
        for (h, n) in hist.iter_mut().zip(s.label_histogram()) {
            *h += n;
        }
    }
    println!("wrote {} scenes to {}", samples.len(), out.display());
    println!("pixels per class: {hist:?}");
    Ok(())
}
