//! Trains the toy model on the synthetic texture set and prints the loss trend.
//!
//! `cargo run --release --example train_toy -- [iterations] [lr]`

use candle_core::DType;
use teformer::data::gen_synthetic;
use teformer::train::{train, TrainConfig, TrainSetup};
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let lr = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let preset = args.next().unwrap_or_else(|| "toy".into());

    let model_cfg = ModelConfig::preset(&preset)?;
    let data = gen_synthetic(500, 64, model_cfg.num_classes, 0)?;
    let (train_set, val_set) = data.split_at(450);
    let model = Teformer::new(&model_cfg, DType::F32)?;
    let cfg = TrainConfig {
        lr,
        iterations,
        ..TrainConfig::default()
    };
    let setup = TrainSetup {
        train: train_set,
        val: val_set,
        ignore_index: 255,
        exclude_classes: &[],
        out_dir: None,
    };
    let report = train(&model, &setup, &cfg)?;
    println!(
        "initial {:.4} final {:.4} ratio {:.3} in {:.1}s",
        report.curve.initial(),
        report.curve.last(),
        report.curve.last() / report.curve.initial(),
        report.wall_time_s
    );
    if let Some((_, m)) = report.validations.last() {
        println!("val mIoU {:.4} mF1 {:.4} PA {:.4}", m.miou, m.mf1, m.pa);
    }
    Ok(())
}
