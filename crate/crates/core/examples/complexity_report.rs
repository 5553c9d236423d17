//! Parameter and multiply-accumulate counts per preset and per module.
//!
//! `cargo run --release --example complexity_report -- [side]`

use candle_core::DType;
use teformer::complexity::count_params_flops;
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    let side = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(256usize);
    for preset in ["toy", "ablation", "paper_scale"] {
        let model = Teformer::inference(&ModelConfig::preset(preset)?, DType::F32)?;
        let c = count_params_flops(&model, side, side)?;
        println!(
            "{preset:12} {:>8.3}M params {:>8.3}G mult-accs at {side}x{side}",
            c.params as f64 / 1e6,
            c.mult_accs as f64 / 1e9
        );
        for part in ["stem", "stage1", "stage2", "stage3", "stage4", "decoder", "fusion", "head"] {
            println!("    {part:8} {:>10}", model.store().num_params_under(part));
        }
    }
    Ok(())
}
