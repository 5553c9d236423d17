//! A short component ablation on the small preset, printed as a table.
//!
//! `cargo run --release --example ablation_study -- [iterations] [seeds] [components]`

use teformer::ablation::{parse_components, run_ablation};
use teformer::config::RunConfig;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().unwrap_or_else(|| "60".into());
    let seeds: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let components = args.next().unwrap_or_else(|| "pasppm,dam,egffm".into());
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ablation.toml");
    let overrides = [
        format!("train.iterations={iterations}"),
        "data.count=120".into(),
        "data.val_count=20".into(),
    ];
    let cfg = RunConfig::load(Some(&path), &overrides)?;
    let rows = run_ablation(&cfg, &parse_components(&components)?, seeds)?;
    println!("{:8} {:9} {:>5} {:>5} {:>5} {:>8} {:>8}", "table", "group", "pasp", "dam", "egffm", "mIoU", "params");
    for r in rows {
        println!(
            "{:8} {:9} {:>5} {:>5} {:>5} {:>8.4} {:>8}",
            r.table, r.group, r.pasppm, r.dam, r.egffm, r.miou, r.params
        );
    }
    Ok(())
}
