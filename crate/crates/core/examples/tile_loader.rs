//! Cuts a large raster pair into fixed windows.
//!
//! `cargo run --release --example tile_loader -- [side] [tile] [stride]`

use teformer::data::{load_tiles, tile_windows, Palette};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let side = args.next().transpose()?.unwrap_or(1300);
    let tile = args.next().transpose()?.unwrap_or(512);
    let stride = args.next().transpose()?.unwrap_or(tile);

    let dir = tempfile_dir()?;
    let (img_dir, lbl_dir) = (dir.join("images"), dir.join("labels"));
    std::fs::create_dir_all(&img_dir)?;
    std::fs::create_dir_all(&lbl_dir)?;
    let palette = Palette::isprs();
    let s = side as u32;
    image::RgbImage::from_fn(s, s, |x, y| image::Rgb([(x / 4) as u8, (y / 4) as u8, 128])).save(img_dir.join("scene.png"))?;
    let mask: Vec<u8> = (0..side * side).map(|i| ((i % side) * 6 / side) as u8).collect();
    palette.encode(&mask, side, side)?.save(lbl_dir.join("scene.png"))?;

    let offsets = tile_windows(side, tile, stride)?;
    println!("{side}px axis, tile {tile}, stride {stride}: offsets {offsets:?}");
    let tiles = load_tiles(&img_dir, &lbl_dir, tile, stride, &palette)?;
    println!("{} tiles, first {} last {}", tiles.len(), tiles[0].id, tiles[tiles.len() - 1].id);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let d = std::env::temp_dir().join(format!("teformer_tiles_{}", std::process::id()));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}
