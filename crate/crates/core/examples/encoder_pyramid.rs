//! Feature pyramid shapes for a few input sizes.
//!
//! `cargo run --release --example encoder_pyramid -- [preset]`

use candle_core::{DType, Device, Tensor};
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "toy".into());
    let model = Teformer::inference(&ModelConfig::preset(&preset)?, DType::F32)?;
    for side in [64, 96, 128] {
        let image = Tensor::zeros((1, 3, side, side), DType::F32, &Device::Cpu)?;
        let p = model.encoder().forward(&model.image(&image)?)?;
        let levels: Vec<String> = p
            .levels()
            .iter()
            .map(|f| format!("s{} {}x{}x{}", f.stride(), f.channels(), f.spatial().0, f.spatial().1))
            .collect();
        println!("{side}x{side}: {}", levels.join(" | "));
    }
    Ok(())
}
