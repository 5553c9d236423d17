//! Briefly trains the toy model, then segments one scene of arbitrary size
//! and writes the color map, id map and class probabilities.
//!
//! `cargo run --release --example predict_export -- [out_dir]`

use std::path::PathBuf;

use candle_core::DType;
use teformer::data::{gen_synthetic, Palette};
use teformer::export::{emit_prediction, predict_image, write_npy_f32};
use teformer::train::{train, TrainConfig, TrainSetup};
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("teformer_pred"));
    let model_cfg = ModelConfig::ablation();
    let data = gen_synthetic(64, 64, model_cfg.num_classes, 0)?;
    let model = Teformer::new(&model_cfg, DType::F32)?;
    let setup = TrainSetup {
        train: &data,
        val: &[],
        ignore_index: 255,
        exclude_classes: &[],
        out_dir: None,
    };
    let cfg = TrainConfig {
        lr: 1e-3,
        iterations: 40,
        ..TrainConfig::default()
    };
    train(&model, &setup, &cfg)?;

    // crop a 57x45 scene to show non-multiple sizes
    let mut scene = gen_synthetic(1, 64, model_cfg.num_classes, 99)?.remove(0);
    let (w, h) = (57, 45);
    scene.image = (0..h).flat_map(|y| scene.image[3 * y * 64..3 * (y * 64 + w)].to_vec()).collect();
    scene.mask = (0..h).flat_map(|y| scene.mask[y * 64..y * 64 + w].to_vec()).collect();
    (scene.width, scene.height) = (w, h);

    let (map, probs) = predict_image(&model, &scene)?;
    let palette = Palette::isprs().truncated(model_cfg.num_classes)?;
    let (pred, ids) = emit_prediction(&scene.id, &map, w, h, &palette, &out)?;
    let npy = out.join(format!("{}_probs.npy", scene.id));
    write_npy_f32(&npy, probs.dims(), &probs.flatten_all()?.to_vec1::<f32>()?)?;
    let agree = map.iter().zip(&scene.mask).filter(|(p, g)| **p == **g as u32).count();
    println!("pixel agreement {:.3}", agree as f64 / map.len() as f64);
    println!("{}\n{}\n{}", pred.display(), ids.display(), npy.display());
    Ok(())
}
