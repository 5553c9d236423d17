//! Quantization and counting statistics of two textures with equal mean color.
//!
//! `cargo run --release --example texture_quantization`

use candle_core::{DType, Device, Tensor};
use teformer::params::ParamStore;
use teformer::qco::{Qco, QuantStats};

fn pattern(f: impl Fn(usize, usize) -> f64) -> anyhow::Result<Tensor> {
    let mut v = Vec::new();
    for c in 0..4 {
        for y in 0..16 {
            for x in 0..16 {
                v.push(1.0 + (c as f64 + 1.0) * f(x, y));
            }
        }
    }
    Ok(Tensor::from_vec(v, (1, 4, 16, 16), &Device::Cpu)?)
}

fn main() -> anyhow::Result<()> {
    let stripes = pattern(|_, y| if y % 4 < 2 { 0.5 } else { -0.5 })?;
    let checker = pattern(|x, y| if (x / 2 + y / 2) % 2 == 0 { 0.3 } else { -0.3 })?;
    let n = 8;
    let store = ParamStore::cpu(DType::F64, 0);
    let qco = Qco::new(&store.root(), n, 16)?;
    for (name, x) in [("stripes", &stripes), ("checker", &checker)] {
        let stats = QuantStats::compute(x, n)?;
        let counts: Vec<String> = stats.counts.get(0)?.to_vec1::<f64>()?.iter().map(|c| format!("{c:.2}")).collect();
        let q = qco.apply(stats)?;
        println!(
            "{name:8} level counts [{}]  adjacency {:?}  updated levels {:?}",
            counts.join(" "),
            q.adjacency.dims(),
            q.updated_levels.dims()
        );
    }
    Ok(())
}
