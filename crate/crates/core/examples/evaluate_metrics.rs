//! Confusion matrix and scores for a small hand-made prediction.
//!
//! `cargo run --release --example evaluate_metrics`

use teformer::metrics::{boundary_stats, compute_metrics, ConfusionMatrix};

fn main() -> anyhow::Result<()> {
    let (w, h) = (6, 4);
    #[rustfmt::skip]
    let gt: Vec<u32> = vec![
        0, 0, 0, 1, 1, 1,
        0, 0, 0, 1, 1, 1,
        2, 2, 2, 1, 1, 255,
        2, 2, 2, 2, 1, 255,
    ];
    #[rustfmt::skip]
    let pred: Vec<u32> = vec![
        0, 0, 1, 1, 1, 1,
        0, 0, 0, 1, 1, 1,
        2, 2, 0, 1, 1, 1,
        2, 2, 2, 1, 1, 0,
    ];
    let cm = ConfusionMatrix::from_maps(&pred, &gt, 4, 255)?;
    for g in 0..3 {
        println!("gt {g}: {:?}", (0..4).map(|p| cm.get(g, p)).collect::<Vec<_>>());
    }
    let mut m = compute_metrics(&cm, &[])?;
    m.boundary_f1 = Some(boundary_stats(&pred, &gt, w, h, 255).f1());
    println!("per-class IoU {:?}", m.iou);
    println!("mIoU {:.4}  mF1 {:.4}  PA {:.4}  boundary F1 {:.4}", m.miou, m.mf1, m.pa, m.boundary_f1.unwrap());
    let without = compute_metrics(&cm, &[2])?;
    println!("excluding class 2 from the means: mIoU {:.4}", without.miou);
    Ok(())
}
