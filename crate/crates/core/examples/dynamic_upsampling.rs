//! Learned point-sampling upsampling next to plain bilinear, on a small ramp.
//!
//! `cargo run --release --example dynamic_upsampling`

use candle_core::{DType, Device, Tensor};
use teformer::params::ParamStore;
use teformer::upsample::{point_sample, DynamicUpsampler, UpsampleMode};
use teformer::FeatureMap;

fn main() -> anyhow::Result<()> {
    let x = Tensor::arange(0f64, 16.0, &Device::Cpu)?.reshape((1, 1, 4, 4))?;
    let plain = point_sample(&x, 2, None)?;
    println!("bilinear x2, first row: {:?}", plain.get(0)?.get(0)?.get(0)?.to_vec1::<f64>()?);

    let store = ParamStore::cpu(DType::F64, 7);
    let up = DynamicUpsampler::new(&store.root(), 1, 2, UpsampleMode::Dynamic)?;
    // widen the offset predictor so its effect is visible
    let w = store.get("offset.weight").expect("offset predictor");
    w.set(&(w.as_tensor() * 200.0)?)?;
    let fm = FeatureMap::new(x.clone(), 8)?;
    let offsets = up.offsets(&x)?.expect("dynamic mode predicts offsets");
    let y = up.forward(&fm)?;
    println!(
        "dynamic x2: stride {} -> {}, max |offset| {:.3}, max |dys - bilinear| {:.3}",
        fm.stride(),
        y.stride(),
        offsets.abs()?.max_all()?.to_scalar::<f64>()?,
        (y.tensor() - &plain)?.abs()?.max_all()?.to_scalar::<f64>()?
    );

    let flat = (Tensor::ones((1, 1, 4, 4), DType::F64, &Device::Cpu)? * 3.5)?;
    let yc = up.forward(&FeatureMap::new(flat, 8)?)?;
    println!("constant 3.5 stays {:?}", yc.tensor().max_all()?.to_scalar::<f64>()?);
    Ok(())
}
