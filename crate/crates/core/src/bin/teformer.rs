use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use teformer::ablation::{parse_components, run_ablation, write_csv};
use teformer::complexity::count_params_flops;
use teformer::config::RunConfig;
use teformer::data::{gen_synthetic, write_manifest};
use teformer::export::{emit_prediction, predict_image, read_image, write_npy_f32, MetricsFile};
use teformer::model::ModelConfig;
use teformer::plot::{bar_chart_png, loss_curve_png};
use teformer::train::{evaluate, train, TrainSetup};
use teformer::Teformer;

#[derive(Parser)]
#[command(name = "teformer", version, about = "Texture-aware segmentation: train, evaluate, predict, ablate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=1e-4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed for model init, data order and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, metrics.json and plots.
    Train {
        /// Output directory (default `runs/<config hash>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write class probabilities as `<id>_probs.npy` (K, H, W).
        #[arg(long)]
        probs: bool,
    },
    /// Component ablation study; writes a CSV report and an mIoU chart.
    Ablate {
        #[arg(long, default_value = "tam,qco-only,pasppm,dam,egffm")]
        components: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Parameter and multiply-accumulate counts.
    Flops {
        /// Model preset (toy, ablation, paper_scale) instead of the config's model.
        #[arg(long)]
        preset: Option<String>,
        /// Input side (default `data.size`).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write a synthetic texture dataset as PNG pairs.
    GenData {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common, checkpoint: Option<&Path>) -> anyhow::Result<RunConfig> {
    // a checkpoint written by `train` carries its config alongside
    let sibling = checkpoint
        .and_then(|p| p.parent())
        .map(|d| d.join("config.toml"))
        .filter(|p| p.exists());
    let path = c.config.clone().or(sibling);
    let mut cfg = RunConfig::load(path.as_deref(), &c.set)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<Teformer> {
    let model = Teformer::inference(&cfg.model, DType::F32)?;
    model
        .store()
        .load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(model)
}

fn cmd_train(common: &Common, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(common, None)?;
    let hash = cfg.hash();
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&hash));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let (train_set, val_set) = cfg.load_data()?;
    log::info!("config {hash}: {} train / {} val samples", train_set.len(), val_set.len());
    let model = Teformer::new(&cfg.model, DType::F32)?;
    let setup = TrainSetup {
        train: &train_set,
        val: &val_set,
        ignore_index: cfg.data.palette.ignore_index,
        exclude_classes: &cfg.metrics.exclude_classes,
        out_dir: Some(&out),
    };
    let rep = train(&model, &setup, &cfg.train)?;
    let curve = &rep.curve;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in curve.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(out.join("loss.csv"), csv)?;
    loss_curve_png(&curve.losses, &curve.smoothed(), &out.join("loss.png"))?;
    println!(
        "initial_loss={:.6} final_loss={:.6} ratio={:.4}",
        curve.initial(),
        curve.last(),
        curve.last() / curve.initial()
    );
    if let Some((_, report)) = rep.validations.last() {
        let side = val_set.first().map_or(cfg.data.size, |s| s.height);
        let c = count_params_flops(&model, side, side)?;
        MetricsFile::new(report, hash, cfg.train.seed, c.params, c.mult_accs, rep.wall_time_s)
            .write(&out.join("metrics.json"))?;
        bar_chart_png(&report.iou, &out.join("per_class_iou.png"))?;
        println!("miou={:.4} mf1={:.4} pa={:.4}", report.miou, report.mf1, report.pa);
    }
    if let Some(ckpt) = rep.checkpoints.last() {
        println!("checkpoint={}", ckpt.display());
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, split: &str, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common, Some(checkpoint))?;
    let model = load_model(&cfg, checkpoint)?;
    let samples = cfg.split(split)?;
    if samples.is_empty() {
        bail!("split `{split}` is empty");
    }
    let start = Instant::now();
    let report = evaluate(
        &model,
        &samples,
        cfg.data.palette.ignore_index,
        &cfg.metrics.exclude_classes,
        cfg.train.batch_size,
    )?;
    let wall = start.elapsed().as_secs_f64();
    let c = count_params_flops(&model, samples[0].height, samples[0].width)?;
    MetricsFile::new(&report, cfg.hash(), cfg.train.seed, c.params, c.mult_accs, wall).write(out)?;
    println!("miou={:.4} mf1={:.4} pa={:.4} out={}", report.miou, report.mf1, report.pa, out.display());
    Ok(())
}

fn cmd_predict(common: &Common, checkpoint: &Path, image: &Path, out: &Path, probs: bool) -> anyhow::Result<()> {
    let cfg = load_config(common, Some(checkpoint))?;
    let model = load_model(&cfg, checkpoint)?;
    let sample = read_image(image, cfg.data.palette.ignore_index)?;
    let (map, p) = predict_image(&model, &sample)?;
    let (pred, ids) = emit_prediction(&sample.id, &map, sample.width, sample.height, &cfg.palette()?, out)?;
    println!("pred={} ids={}", pred.display(), ids.display());
    if probs {
        let path = out.join(format!("{}_probs.npy", sample.id));
        write_npy_f32(&path, p.dims(), &p.flatten_all()?.to_vec1::<f32>()?)?;
        println!("probs={}", path.display());
    }
    Ok(())
}

fn cmd_ablate(common: &Common, components: &str, seeds: usize, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common, None)?;
    let comps = parse_components(components)?;
    let rows = run_ablation(&cfg, &comps, seeds)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&rows, out)?;
    let miou: Vec<Option<f64>> = rows.iter().map(|r| Some(r.miou)).collect();
    bar_chart_png(&miou, &out.with_extension("png"))?;
    for r in &rows {
        println!("{} {} miou={:.4} mf1={:.4} pa={:.4}", r.table, r.group, r.miou, r.mf1, r.pa);
    }
    Ok(())
}

fn cmd_flops(common: &Common, preset: Option<&str>, size: Option<usize>) -> anyhow::Result<()> {
    let cfg = load_config(common, None)?;
    let model_cfg = match preset {
        Some(name) => ModelConfig::preset(name)?,
        None => cfg.model.clone(),
    };
    let side = size.unwrap_or(cfg.data.size);
    let model = Teformer::inference(&model_cfg, DType::F32)?;
    let c = count_params_flops(&model, side, side)?;
    println!(
        "params={} ({:.2}M) mult_accs={} ({:.2}G) input={side}x{side}",
        c.params,
        c.params as f64 / 1e6,
        c.mult_accs,
        c.mult_accs as f64 / 1e9
    );
    log::info!("published full-scale reference: 52.67M params, 72.25G FLOPs at 512x512 (context only)");
    Ok(())
}

fn cmd_gen_data(common: &Common, count: usize, size: usize, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common, None)?;
    let palette = cfg.palette()?;
    let samples = gen_synthetic(count, size, cfg.model.num_classes, cfg.data.seed)?;
    let (images, labels) = (out.join("images"), out.join("labels"));
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&labels)?;
    for s in &samples {
        let name = format!("{}.png", s.id);
        s.save(&images.join(&name), &labels.join(&name), &palette)?;
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    write_manifest(&out.join("manifest.txt"), &ids)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.common;
    match cli.command {
        Command::Train { out } => cmd_train(&common, out),
        Command::Eval {
            checkpoint,
            split,
            out,
        } => cmd_eval(&common, &checkpoint, &split, &out),
        Command::Predict {
            checkpoint,
            image,
            out,
            probs,
        } => cmd_predict(&common, &checkpoint, &image, &out, probs),
        Command::Ablate {
            components,
            seeds,
            out,
        } => cmd_ablate(&common, &components, seeds, &out),
        Command::Flops { preset, size } => cmd_flops(&common, preset.as_deref(), size),
        Command::GenData {
            count,
            size,
            out,
        } => cmd_gen_data(&common, count, size, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // sources already quoted by their parent message are skipped
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
