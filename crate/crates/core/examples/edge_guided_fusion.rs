//! Edge-gated fusion: the gate map and the share of detail versus context.
//!
//! `cargo run --release --example edge_guided_fusion`

use candle_core::{DType, Device, Tensor};
use teformer::eg3head::GateProbe;
use teformer::{ModelConfig, Teformer};

fn main() -> anyhow::Result<()> {
    let model = Teformer::inference(&ModelConfig::toy(), DType::F32)?;
    let image = Tensor::randn(0f32, 1.0, (1, 3, 64, 64), &Device::Cpu)?;
    let pyramid = model.encoder().forward(&model.image(&image)?)?;
    let bundle = model.decoder().forward(&pyramid)?;
    let norm = |t: &Tensor| -> anyhow::Result<f32> { Ok(t.sqr()?.mean_all()?.sqrt()?.to_scalar::<f32>()?) };

    let (detail, context, sigma) = model.fusion().terms(&bundle, GateProbe::None)?;
    if let Some(s) = sigma {
        let t = s.tensor();
        println!(
            "gate {:?}: min {:.3} mean {:.3} max {:.3}",
            t.dims(),
            t.min_all()?.to_scalar::<f32>()?,
            t.mean_all()?.to_scalar::<f32>()?,
            t.max_all()?.to_scalar::<f32>()?
        );
    }
    println!("rms detail term {:.4}, rms context term {:.4}", norm(&detail)?, norm(&context)?);
    for logit in [-20.0, 20.0] {
        let (d, c, _) = model.fusion().terms(&bundle, GateProbe::Fixed(logit))?;
        println!("gate logit {logit:>5}: rms detail {:.4}, rms context {:.4}", norm(&d)?, norm(&c)?);
    }
    let fused = model.fusion().forward(&bundle)?;
    println!("fused {:?} at stride {}", fused.dims(), fused.stride());
    Ok(())
}
