//! One stage-1 encoder block and the texture module's intermediate products.
//!
//! `cargo run --release --example texture_block`

use candle_core::{DType, Device, Tensor};
use teformer::encoder::EncoderBlock;
use teformer::params::ParamStore;
use teformer::tam::Tam;
use teformer::{FeatureMap, ModelConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::toy();
    let c = cfg.stage_channels[0];
    let x = FeatureMap::new(Tensor::randn(0f32, 1.0, (1, c, 16, 16), &Device::Cpu)?, 4)?;

    let store = ParamStore::cpu(DType::F32, 1);
    let tam = Tam::new(&store.root(), c, &cfg.tam_config(0))?;
    let f = tam.forward_features(&x)?;
    println!("X' {:?} (texture channels + input)", f.enhanced.dims());
    for (b, scale) in f.branches.iter().zip(["1/8", "1/4", "1/2", "1"]) {
        println!("  branch {scale:>3}: {:?} at stride {}", b.dims(), b.stride());
    }
    println!("X_TaM {:?}, TaM params {}", f.fused.dims(), store.num_params());

    let bstore = ParamStore::cpu(DType::F32, 2);
    let block = EncoderBlock::texture(&bstore.root(), 0, c, &cfg, cfg.stripe_width)?;
    let y = block.forward(&x)?;
    println!("block output {:?}, block params {}", y.dims(), bstore.num_params());
    for part in ["tam.", "cwsa.", "ccab.", "ffn"] {
        println!("  {part:6} {}", bstore.num_params_under(part));
    }
    Ok(())
}
