//! The decoder's edge, detail and context outputs, and how the detail gate
//! moves between its two inputs.
//!
//! `cargo run --release --example decoder_branches`

use candle_core::{DType, Device, Tensor};
use teformer::eg3head::GateProbe;
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    let model = Teformer::inference(&ModelConfig::toy(), DType::F32)?;
    let image = Tensor::randn(0f32, 1.0, (1, 3, 64, 64), &Device::Cpu)?;
    let pyramid = model.encoder().forward(&model.image(&image)?)?;
    let bundle = model.decoder().forward(&pyramid)?;
    if let Some(p_e) = &bundle.p_e {
        println!("P_e  {:?} stride {}", p_e.dims(), p_e.stride());
    }
    println!("P_d1 {:?} stride {}", bundle.p_d1.dims(), bundle.p_d1.stride());
    println!("P_d2 {:?} stride {}", bundle.p_d2.dims(), bundle.p_d2.stride());
    println!("P_c  {:?} stride {}", bundle.p_c.dims(), bundle.p_c.stride());

    // a saturated gate selects one stream outright
    for logit in [-30.0, 0.0, 30.0] {
        let b = model.decoder().forward_probed(&pyramid, GateProbe::Fixed(logit))?;
        let mean = b.p_d1.tensor().mean_all()?.to_scalar::<f32>()?;
        println!("detail gate logit {logit:>5}: mean P_d1 {mean:.4}");
    }
    Ok(())
}
