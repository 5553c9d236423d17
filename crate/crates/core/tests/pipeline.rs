//! Training, checkpointing and data loading wired together.

use std::path::PathBuf;

use candle_core::DType;

use teformer::config::RunConfig;
use teformer::data::{write_manifest, Palette};
use teformer::train::{evaluate, predict_maps, train, TrainSetup};
use teformer::Teformer;

fn tiny() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/ablation.toml");
    let overrides = [
        "train.iterations=6",
        "train.eval_every=3",
        "data.count=12",
        "data.val_count=4",
        "data.size=32",
        "train.crop=32",
    ];
    RunConfig::load(Some(&path), &overrides.map(String::from)).unwrap()
}

#[test]
fn checkpoints_restore_the_trained_model() {
    let cfg = tiny();
    let (train_set, val_set) = cfg.load_data().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |out: PathBuf| {
        let model = Teformer::new(&cfg.model, DType::F32).unwrap();
        let setup = TrainSetup {
            train: &train_set,
            val: &val_set,
            ignore_index: 255,
            exclude_classes: &[],
            out_dir: Some(&out),
        };
        let rep = train(&model, &setup, &cfg.train).unwrap();
        (model, rep)
    };
    let (model, rep) = run(dir.path().join("a"));
    let (_, again) = run(dir.path().join("b"));
    assert_eq!(rep.curve.losses.len(), 6);
    assert_eq!(rep.validations.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![3, 6]);
    let last = rep.checkpoints.last().unwrap();
    assert_eq!(std::fs::read(last).unwrap(), std::fs::read(again.checkpoints.last().unwrap()).unwrap());

    let restored = Teformer::inference(&cfg.model, DType::F32).unwrap();
    restored.store().load(last).unwrap();
    assert_eq!(predict_maps(&model, &val_set, 2).unwrap(), predict_maps(&restored, &val_set, 2).unwrap());
    let a = evaluate(&model, &val_set, 255, &[], 2).unwrap();
    let b = evaluate(&restored, &val_set, 255, &[], 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(rep.validations.last().unwrap().1, a);
}

#[test]
fn checkpoint_for_another_shape_is_rejected() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    Teformer::new(&cfg.model, DType::F32).unwrap().store().save(&path).unwrap();
    let mut other = cfg.model.clone();
    other.decoder_channels = 16;
    assert!(Teformer::inference(&other, DType::F32).unwrap().store().load(&path).is_err());
}

#[test]
fn directory_source_splits_by_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = (dir.path().join("images"), dir.path().join("labels"));
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&labels).unwrap();
    let pal = Palette::isprs();
    for (stem, class) in [("north", 1u8), ("south", 3u8)] {
        image::RgbImage::from_pixel(96, 64, image::Rgb([class * 40, 20, 20]))
            .save(images.join(format!("{stem}.png")))
            .unwrap();
        pal.encode(&vec![class; 96 * 64], 96, 64).unwrap().save(labels.join(format!("{stem}.png"))).unwrap();
    }
    write_manifest(&dir.path().join("train.txt"), &["north".to_string()]).unwrap();
    write_manifest(&dir.path().join("val.txt"), &["south".to_string()]).unwrap();
    let toml = format!(
        "[model]\nnum_classes = 6\n[data]\nsource = \"directory\"\nimage_dir = {:?}\nlabel_dir = {:?}\n\
         tile = 32\nstride = 32\ntrain_manifest = {:?}\nval_manifest = {:?}\n",
        images,
        labels,
        dir.path().join("train.txt"),
        dir.path().join("val.txt"),
    );
    let cfg = RunConfig::from_toml_str(&toml, &[]).unwrap();
    let (train_set, val_set) = cfg.load_data().unwrap();
    assert_eq!((train_set.len(), val_set.len()), (6, 6));
    assert!(train_set.iter().all(|s| s.id.starts_with("north_") && s.mask.iter().all(|&m| m == 1)));
    assert!(val_set.iter().all(|s| s.id.starts_with("south_") && s.mask.iter().all(|&m| m == 3)));
}
