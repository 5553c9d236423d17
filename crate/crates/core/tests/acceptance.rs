//! The nine acceptance criteria. Each test prints one `PASS`/`FAIL` line on
//! stderr (visible without `--nocapture`) before asserting.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use common::{gradcheck, max_abs_diff, randn, report, rng, spread_picks, uniform, values, TOLERANCE};
use teformer::ablation::{parse_components, run_ablation, write_csv};
use teformer::complexity::count_params_flops;
use teformer::config::RunConfig;
use teformer::data::{load_tiles, tile_windows, Palette};
use teformer::eg3head::{DecoderBundle, DecoderConfig, GateProbe, Pasppm};
use teformer::egffm::{Egffm, FusionConfig};
use teformer::metrics::{compute_metrics, ConfusionMatrix};
use teformer::params::ParamStore;
use teformer::qco::{Qco, QuantStats};
use teformer::train::{cross_entropy, train, TrainSetup};
use teformer::upsample::{point_sample, DynamicUpsampler, UpsampleMode};
use teformer::{FeatureMap, ModelConfig, Teformer};

fn verdict(n: usize, name: &str, pass: bool, detail: &str, start: Instant) {
    report(&format!(
        "criterion {n} [{}] {name}: {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    ));
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// 1 ----------------------------------------------------------------------

#[test]
fn criterion_1_qco_invariants() {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut b_dev, mut count_dev, mut d_dev, mut perm_dev) = (0f64, 0f64, 0f64, 0f64);
    let cases = 1000;
    for case in 0..cases {
        let c = r.gen_range(1..=8);
        let h = r.gen_range(1..=8);
        let w = r.gen_range(1..=8);
        let n = r.gen_range(2..=16);
        let x = randn(&mut r, &[1, c, h, w]);
        let stats = QuantStats::compute(&x, n).unwrap();
        let rows = stats.encoding.sum(2).unwrap();
        b_dev = b_dev.max(values(&rows).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max));
        count_dev = count_dev.max((values(&stats.counts).iter().sum::<f64>() - 1.0).abs());

        let store = ParamStore::cpu(DType::F64, case);
        let qco = Qco::new(&store.root(), n, 4).unwrap();
        let q = qco.apply(stats.clone()).unwrap();
        let d_rows = q.adjacency.sum(2).unwrap();
        d_dev = d_dev.max(values(&d_rows).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max));

        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(&mut r);
        let idx = Tensor::from_vec(perm.iter().map(|&p| p as u32).collect::<Vec<_>>(), h * w, &Device::Cpu).unwrap();
        let xp = x
            .reshape((1, c, h * w))
            .unwrap()
            .index_select(&idx, 2)
            .unwrap()
            .reshape((1, c, h, w))
            .unwrap();
        let sp = QuantStats::compute(&xp, n).unwrap();
        perm_dev = perm_dev.max(max_abs_diff(&sp.counts, &stats.counts));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = b_dev <= 1e-5 && count_dev <= 1e-5 && d_dev <= 1e-5 && perm_dev <= 1e-6 && secs < 60.0;
    verdict(
        1,
        "QCO invariants",
        pass,
        &format!(
            "{cases} inputs: B rows {b_dev:.1e}, counts {count_dev:.1e}, D rows {d_dev:.1e}, permutation {perm_dev:.1e}"
        ),
        start,
    );
    assert!(pass);
}

// 2 ----------------------------------------------------------------------

fn weighted_sum(t: &Tensor, w: &Tensor) -> Tensor {
    (t * w).unwrap().sum_all().unwrap()
}

fn qco_spatial_check() -> common::GradReport {
    let mut r = rng(21);
    let n = 8;
    let delta = 2.0 / (n - 1) as f64;
    // an input whose similarity values all sit clear of the kernel kinks
    let x0 = loop {
        let x = randn(&mut r, &[1, 8, 4, 4]);
        let s = values(&QuantStats::compute(&x, n).unwrap().similarity.values);
        let clear = s.iter().all(|&s| {
            (0..n).all(|k| (s - (-1.0 + k as f64 * delta)).abs() > 1e-3 * delta)
        });
        if clear {
            break x;
        }
    };
    let store = ParamStore::cpu(DType::F64, 5);
    let qco = Qco::new(&store.root(), n, 4).unwrap();
    let x = Var::from_tensor(&x0).unwrap();
    let vars = vec![("input".to_string(), x.clone())];
    let picks: Vec<(usize, usize)> = (0..x0.elem_count()).map(|i| (0, i)).collect();
    let mut rep = gradcheck(
        &vars,
        &picks,
        || {
            let f = FeatureMap::new(x.as_tensor().clone(), 4).unwrap();
            qco.spatial(&f).unwrap().tensor().sum_all().unwrap()
        },
        &mut r,
    );
    let w = randn(&mut r, &[1, 4, 4, 4]);
    let weighted = gradcheck(
        &vars,
        &picks,
        || {
            let f = FeatureMap::new(x.as_tensor().clone(), 4).unwrap();
            weighted_sum(qco.spatial(&f).unwrap().tensor(), &w)
        },
        &mut r,
    );
    rep.samples.extend(weighted.samples);
    rep.rejected += weighted.rejected;
    rep
}

fn egffm_check() -> common::GradReport {
    let mut r = rng(22);
    let c = 8;
    let store = ParamStore::cpu(DType::F64, 6);
    let cfg = FusionConfig {
        channels: c,
        bias: true,
        upsampler: UpsampleMode::Dynamic,
        enabled: true,
        edge_operand: false,
    };
    let fusion = Egffm::new(&store.root(), &cfg).unwrap();
    let p_d2 = Var::from_tensor(&randn(&mut r, &[1, c, 4, 4])).unwrap();
    let p_c = Var::from_tensor(&randn(&mut r, &[1, c, 1, 1])).unwrap();
    let p_e = Var::from_tensor(&randn(&mut r, &[1, c, 2, 2])).unwrap();
    let w = randn(&mut r, &[1, c, 8, 8]);
    let mut vars = vec![
        ("P_d2".to_string(), p_d2.clone()),
        ("P_c".to_string(), p_c.clone()),
        ("P_e".to_string(), p_e.clone()),
    ];
    vars.extend(store.named_vars());
    let picks = spread_picks(&vars, 40, &mut r);
    gradcheck(
        &vars,
        &picks,
        || {
            let b = DecoderBundle {
                p_e: Some(FeatureMap::new(p_e.as_tensor().clone(), 16).unwrap()),
                p_d1: FeatureMap::new(p_d2.as_tensor().clone(), 8).unwrap(),
                p_d2: FeatureMap::new(p_d2.as_tensor().clone(), 8).unwrap(),
                p_c: FeatureMap::new(p_c.as_tensor().clone(), 32).unwrap(),
            };
            weighted_sum(fusion.forward(&b).unwrap().tensor(), &w)
        },
        &mut r,
    )
}

fn decoder_cfg(c: usize, cin: usize, bias: bool) -> DecoderConfig {
    DecoderConfig {
        channels: c,
        in_channels: [cin; 4],
        pasppm_pools: [5, 9],
        pasppm_dilations: [2, 4],
        pasppm_width: None,
        bias,
        upsampler: UpsampleMode::Dynamic,
        pasppm: true,
        dam: true,
        edge: true,
    }
}

fn pasppm_check() -> common::GradReport {
    let mut r = rng(23);
    let store = ParamStore::cpu(DType::F64, 7);
    let pasppm = Pasppm::new(&store.root(), 6, &decoder_cfg(8, 6, true)).unwrap();
    let x = Var::from_tensor(&randn(&mut r, &[1, 6, 5, 5])).unwrap();
    let w = randn(&mut r, &[1, 8, 5, 5]);
    let mut vars = vec![("E4".to_string(), x.clone())];
    vars.extend(store.named_vars());
    let picks = spread_picks(&vars, 40, &mut r);
    gradcheck(
        &vars,
        &picks,
        || {
            let f = FeatureMap::new(x.as_tensor().clone(), 32).unwrap();
            weighted_sum(pasppm.forward(&f).unwrap().tensor(), &w)
        },
        &mut r,
    )
}

const MODULE_GROUPS: [&str; 19] = [
    "stem.",
    "stage1.block0.tam.",
    "stage1.block0.cwsa.",
    "stage1.block0.ccab.",
    "stage1.block0.ffn",
    "stage2.merge.",
    "stage2.block0.tam.",
    "stage3.",
    "stage4.",
    "decoder.edge.",
    "decoder.detail.dam.",
    "decoder.detail.refine.",
    "decoder.context.pasppm.",
    "fusion.gate.",
    "fusion.conv_d.",
    "fusion.conv_c.",
    "fusion.ctx_up.",
    "head.merge.",
    "head.up.",
];

fn end_to_end_check() -> (common::GradReport, usize) {
    let mut r = rng(24);
    let model = Teformer::new(&ModelConfig::ablation(), DType::F64).unwrap();
    let image = randn(&mut r, &[1, 3, 64, 64]);
    let labels: Vec<u32> = (0..64 * 64).map(|_| r.gen_range(0..5)).collect();
    let targets = Tensor::from_vec(labels, (1, 64, 64), &Device::Cpu).unwrap();
    let all = model.store().named_vars();
    let mut vars = Vec::new();
    for g in MODULE_GROUPS {
        let under: Vec<_> = all.iter().filter(|(n, _)| n.starts_with(g)).collect();
        assert!(!under.is_empty(), "no parameters under {g}");
        vars.push((*under.choose(&mut r).unwrap()).clone());
    }
    let picks = spread_picks(&vars, 38, &mut r);
    let rep = gradcheck(
        &vars,
        &picks,
        || {
            let out = model.forward(&model.image(&image).unwrap()).unwrap();
            cross_entropy(out.logits.tensor(), &targets, 255).unwrap()
        },
        &mut r,
    );
    (rep, MODULE_GROUPS.len())
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let parts = [
        ("qco_spatial", qco_spatial_check()),
        ("egffm", egffm_check()),
        ("pasppm", pasppm_check()),
    ];
    let (e2e, groups) = end_to_end_check();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, rep) in parts.iter().chain([("end-to-end", e2e)].iter()) {
        let ok = rep.worst() < TOLERANCE && !rep.samples.is_empty();
        if name == &"end-to-end" {
            pass &= rep.samples.len() >= 32;
        }
        pass &= ok;
        detail.push(format!("{name}: {}", rep.summary()));
        for s in rep.samples.iter().filter(|s| s.rel_err() >= TOLERANCE) {
            report(&format!("  {name} {}[{}]: analytic {:e} numeric {:e}", s.name, s.index, s.analytic, s.numeric));
        }
    }
    pass &= start.elapsed().as_secs_f64() < 300.0;
    verdict(
        2,
        "gradient checks",
        pass,
        &format!("{}; end-to-end spans {groups} module groups", detail.join("; ")),
        start,
    );
    assert!(pass);
}

// 3 ----------------------------------------------------------------------

fn bilinear_oracle(x: &[f64], h: usize, w: usize, scale: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w * scale * scale);
    let coord = |i: usize, n: usize| -> (usize, usize, f64) {
        let p = ((i as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, p - lo as f64)
    };
    for i in 0..h * scale {
        let (y0, y1, fy) = coord(i, h);
        for j in 0..w * scale {
            let (x0, x1, fx) = coord(j, w);
            let v = |y: usize, xx: usize| x[y * w + xx];
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[test]
fn criterion_3_upsampler_oracle() {
    let start = Instant::now();
    let mut r = rng(3);
    let mut oracle_dev = 0f64;
    let mut const_dev = 0f64;
    // the fixed 2×2 case
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], (1, 1, 2, 2), &Device::Cpu).unwrap();
    let got = values(&point_sample(&x, 2, None).unwrap());
    let want = bilinear_oracle(&[1.0, 2.0, 3.0, 4.0], 2, 2, 2);
    oracle_dev = oracle_dev.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    for _ in 0..50 {
        let scale = [2, 4, 8][r.gen_range(0..3)];
        let (c, h, w) = (r.gen_range(1..4), r.gen_range(1..7), r.gen_range(1..7));
        let x = randn(&mut r, &[1, c, h, w]);
        let zeros = Tensor::zeros((1, 2, h * scale, w * scale), DType::F64, &Device::Cpu).unwrap();
        let out = values(&point_sample(&x, scale, Some(&zeros)).unwrap());
        let xv = values(&x);
        for ch in 0..c {
            let want = bilinear_oracle(&xv[ch * h * w..(ch + 1) * h * w], h, w, scale);
            let got = &out[ch * want.len()..(ch + 1) * want.len()];
            oracle_dev = oracle_dev.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        // constancy under arbitrary bounded offsets and under the learned upsampler
        let v = r.gen_range(-5.0..5.0);
        let k = (Tensor::ones((1, c, h, w), DType::F64, &Device::Cpu).unwrap() * v).unwrap();
        let off = uniform(&mut r, &[1, 2, h * scale, w * scale], -0.25, 0.25);
        let y = point_sample(&k, scale, Some(&off)).unwrap();
        const_dev = const_dev.max(values(&y).iter().map(|a| (a - v).abs()).fold(0.0, f64::max));
        let store = ParamStore::cpu(DType::F64, r.gen());
        let up = DynamicUpsampler::new(&store.root(), c, scale, UpsampleMode::Dynamic).unwrap();
        for (_, var) in store.named_vars() {
            let t = (randn(&mut r, var.dims()) * 10.0).unwrap();
            var.set(&t).unwrap();
        }
        let y = up.forward(&FeatureMap::new(k, 8).unwrap()).unwrap();
        const_dev = const_dev.max(values(y.tensor()).iter().map(|a| (a - v).abs()).fold(0.0, f64::max));
    }
    let pass = oracle_dev <= 1e-6 && const_dev <= 1e-6;
    verdict(
        3,
        "upsampler oracle",
        pass,
        &format!("zero-offset vs scalar bilinear {oracle_dev:.1e}, constancy {const_dev:.1e}"),
        start,
    );
    assert!(pass);
}

// 4 ----------------------------------------------------------------------

struct Brute {
    miou: f64,
    mf1: f64,
    pa: f64,
    iou: Vec<Option<f64>>,
}

fn brute_force(pred: &[u32], gt: &[u32], k: usize, ignore: u32) -> Brute {
    let mut iou = Vec::new();
    let mut f1 = Vec::new();
    let (mut correct, mut scored) = (0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        if g != ignore {
            scored += 1;
            correct += (p == g) as u64;
        }
    }
    for c in 0..k as u32 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore {
                continue;
            }
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            iou.push(None);
            f1.push(None);
        } else {
            let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
            iou.push(Some(tp / (tp + fp + fn_)));
            f1.push(Some(2.0 * tp / (2.0 * tp + fp + fn_)));
        }
    }
    let mean = |v: &[Option<f64>]| {
        let kept: Vec<f64> = v.iter().flatten().copied().collect();
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Brute {
        miou: mean(&iou),
        mf1: mean(&f1),
        pa: correct as f64 / scored as f64,
        iou,
    }
}

#[test]
fn criterion_4_metric_oracle() {
    let start = Instant::now();
    let cm = ConfusionMatrix::from_maps(&[0, 1, 1, 1], &[0, 0, 1, 1], 2, 255).unwrap();
    let m = compute_metrics(&cm, &[]).unwrap();
    // per-class fractions exact; class means within one ulp of 7/12 and 11/15
    let ulp = |a: f64, b: f64| (a - b).abs() <= f64::EPSILON * b.abs();
    let hand = m.iou == vec![Some(1.0 / 2.0), Some(2.0 / 3.0)]
        && m.f1 == vec![Some(2.0 / 3.0), Some(4.0 / 5.0)]
        && ulp(m.miou, 7.0 / 12.0)
        && ulp(m.mf1, 11.0 / 15.0)
        && m.pa == 0.75;
    let mut r = rng(4);
    let mut matches = 0;
    for _ in 0..100 {
        let k = r.gen_range(2..=6);
        let gt: Vec<u32> = (0..256)
            .map(|_| if r.gen_bool(0.1) { 255 } else { r.gen_range(0..k as u32) })
            .collect();
        let pred: Vec<u32> = (0..256).map(|_| r.gen_range(0..k as u32)).collect();
        let rep = compute_metrics(&ConfusionMatrix::from_maps(&pred, &gt, k, 255).unwrap(), &[]).unwrap();
        let b = brute_force(&pred, &gt, k, 255);
        if rep.miou == b.miou && rep.mf1 == b.mf1 && rep.pa == b.pa && rep.iou == b.iou {
            matches += 1;
        }
    }
    let pass = hand && matches == 100;
    verdict(
        4,
        "metric oracle",
        pass,
        &format!(
            "hand case mIoU {:.4} mF1 {:.4} PA {:.2} ({}); brute force exact on {matches}/100 maps",
            m.miou,
            m.mf1,
            m.pa,
            if hand { "exact" } else { "mismatch" }
        ),
        start,
    );
    assert!(pass);
}

// 5 ----------------------------------------------------------------------

#[test]
fn criterion_5_fusion_saturation() {
    let start = Instant::now();
    let mut r = rng(5);
    let c = 8;
    let store = ParamStore::cpu(DType::F64, 8);
    let cfg = FusionConfig {
        channels: c,
        bias: false,
        upsampler: UpsampleMode::Dynamic,
        enabled: true,
        edge_operand: false,
    };
    let fusion = Egffm::new(&store.root(), &cfg).unwrap();
    let bundle = |p_d2: &Tensor, p_c: &Tensor, p_e: &Tensor| DecoderBundle {
        p_e: Some(FeatureMap::new(p_e.clone(), 16).unwrap()),
        p_d1: FeatureMap::new(p_d2.clone(), 8).unwrap(),
        p_d2: FeatureMap::new(p_d2.clone(), 8).unwrap(),
        p_c: FeatureMap::new(p_c.clone(), 32).unwrap(),
    };
    let (d, d2) = (randn(&mut r, &[2, c, 8, 8]), randn(&mut r, &[2, c, 8, 8]));
    let (k, k2) = (randn(&mut r, &[2, c, 2, 2]), randn(&mut r, &[2, c, 2, 2]));
    let e = randn(&mut r, &[2, c, 4, 4]);

    let up = GateProbe::Fixed(20.0);
    let (_, ctx_term, _) = fusion.terms(&bundle(&d, &k, &e), up).unwrap();
    let ctx_max = values(&ctx_term).iter().map(|v| v.abs()).fold(0.0, f64::max);
    let f_a = fusion.forward_probed(&bundle(&d, &k, &e), up).unwrap();
    let f_b = fusion.forward_probed(&bundle(&d, &k2, &e), up).unwrap();
    let ctx_swap = max_abs_diff(f_a.tensor(), f_b.tensor());

    let down = GateProbe::Fixed(-20.0);
    let (det_term, _, _) = fusion.terms(&bundle(&d, &k, &e), down).unwrap();
    let det_max = values(&det_term).iter().map(|v| v.abs()).fold(0.0, f64::max);
    let g_a = fusion.forward_probed(&bundle(&d, &k, &e), down).unwrap();
    let g_b = fusion.forward_probed(&bundle(&d2, &k, &e), down).unwrap();
    let det_swap = max_abs_diff(g_a.tensor(), g_b.tensor());

    let pass = ctx_max <= 1e-6 && ctx_swap <= 1e-6 && det_max <= 1e-6 && det_swap <= 1e-6;
    verdict(
        5,
        "fusion gate saturation",
        pass,
        &format!(
            "+20: context term {ctx_max:.1e}, F change on swapping P_c {ctx_swap:.1e}; \
             -20: detail term {det_max:.1e}, F change on swapping P_d2 {det_swap:.1e}"
        ),
        start,
    );
    assert!(pass);
}

// 6 ----------------------------------------------------------------------

#[test]
fn criterion_6_toy_training() {
    let start = Instant::now();
    let cfg = RunConfig::load(Some(&configs().join("toy.toml")), &["train.eval_every=0".into()]).unwrap();
    assert_eq!((cfg.data.count, cfg.data.size, cfg.model.num_classes), (500, 64, 5));
    assert_eq!((cfg.train.iterations, cfg.train.batch_size), (300, 2));
    let (train_set, val_set) = cfg.load_data().unwrap();
    let run = || {
        let model = Teformer::new(&cfg.model, DType::F32).unwrap();
        let setup = TrainSetup {
            train: &train_set,
            val: &[],
            ignore_index: 255,
            exclude_classes: &[],
            out_dir: None,
        };
        (train(&model, &setup, &cfg.train).unwrap(), model)
    };
    let (a, model) = run();
    let (b, _) = run();
    let ratio = a.curve.last() / a.curve.initial();
    let deterministic = a.curve.losses == b.curve.losses;
    let val = teformer::train::evaluate(&model, &val_set, 255, &[], 2).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = ratio <= 0.5 && deterministic && secs < 600.0;
    verdict(
        6,
        "toy training",
        pass,
        &format!(
            "smoothed loss {:.4} -> {:.4} (ratio {ratio:.3}, lr {:e}), identical curves on rerun: {deterministic}, \
             val mIoU {:.3}",
            a.curve.initial(),
            a.curve.last(),
            cfg.train.lr,
            val.miou
        ),
        start,
    );
    assert!(pass);
}

// 7 ----------------------------------------------------------------------

#[test]
fn criterion_7_ablation_trend() {
    let start = Instant::now();
    let cfg = RunConfig::load(Some(&configs().join("ablation.toml")), &[]).unwrap();
    assert_eq!(cfg.train.iterations, 1000);
    let comps = parse_components("tam,qco-only,pasppm,dam,egffm").unwrap();
    let rows = run_ablation(&cfg, &comps, 3).unwrap();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ablation.csv");
    write_csv(&rows, &out).unwrap();
    for row in &rows {
        report(&format!(
            "  {} {}: mIoU {:.4} mF1 {:.4} PA {:.4} params {}",
            row.table, row.group, row.miou, row.mf1, row.pa, row.params
        ));
    }
    let find = |table: &str, group: &str| rows.iter().find(|r| r.table == table && r.group == group).unwrap().miou;
    let (baseline, full) = (find("decoder", "1"), find("decoder", "5"));
    let (qco_only, tam) = (find("texture", "qco_only"), find("texture", "full"));
    let shape = rows.len() == 8 && rows.iter().all(|r| r.seeds.split(';').count() == 3);
    let secs = start.elapsed().as_secs_f64();
    let pass = shape && full >= baseline && tam >= qco_only && secs < 3600.0;
    verdict(
        7,
        "ablation trend",
        pass,
        &format!(
            "median mIoU full {full:.4} vs all ablated {baseline:.4}; full TaM {tam:.4} vs QCO-only {qco_only:.4}; \
             report {}",
            out.display()
        ),
        start,
    );
    assert!(pass);
}

// 8 ----------------------------------------------------------------------

#[test]
fn criterion_8_structure() {
    let start = Instant::now();
    let toy = Teformer::new(&ModelConfig::toy(), DType::F32).unwrap();
    let image = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
    let p = toy.encoder().forward(&toy.image(&image).unwrap()).unwrap();
    let shapes: Vec<(usize, (usize, usize))> = p.levels().iter().map(|f| (f.stride(), f.spatial())).collect();
    let pyramid = shapes == vec![(4, (16, 16)), (8, (8, 8)), (16, (4, 4)), (32, (2, 2))];
    let toy_count = count_params_flops(&toy, 64, 64).unwrap();
    let scale_model = Teformer::inference(&ModelConfig::paper_scale(), DType::F32).unwrap();
    let scale = count_params_flops(&scale_model, 512, 512).unwrap();
    report(&format!(
        "  paper_scale guess at 512x512: {:.2}M params, {:.2}G mult-accs (published: 52.67M, 72.25G; context only)",
        scale.params as f64 / 1e6,
        scale.mult_accs as f64 / 1e9
    ));
    let pass = pyramid && toy_count.params < 5_000_000 && scale.params > 0 && scale.mult_accs > 0;
    verdict(
        8,
        "structure",
        pass,
        &format!(
            "pyramid {shapes:?}; toy {:.3}M params; paper_scale counted",
            toy_count.params as f64 / 1e6
        ),
        start,
    );
    assert!(pass);
}

// 9 ----------------------------------------------------------------------

#[test]
fn criterion_9_round_trips() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let a = Teformer::new(&ModelConfig::toy(), DType::F32).unwrap();
    let first = dir.path().join("a.safetensors");
    let second = dir.path().join("b.safetensors");
    a.store().save(&first).unwrap();
    let b = Teformer::new(&ModelConfig { seed: 99, ..ModelConfig::toy() }, DType::F32).unwrap();
    b.store().load(&first).unwrap();
    b.store().save(&second).unwrap();
    let ckpt = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();

    let pal = Palette::isprs();
    let k = pal.num_classes();
    let mut r = rng(9);
    let labels: Vec<u8> = (0..97 * 31).map(|_| r.gen_range(0..k as u8)).collect();
    let (back, unknown) = pal.decode(&pal.encode(&labels, 97, 31).unwrap());
    let palette = back == labels && unknown == 0;

    // a 6000×6000 raster: 12 windows per axis
    let side = 6000u32;
    let img_dir = dir.path().join("img");
    let lbl_dir = dir.path().join("lbl");
    std::fs::create_dir_all(&img_dir).unwrap();
    std::fs::create_dir_all(&lbl_dir).unwrap();
    image::RgbImage::from_fn(side, side, |x, y| image::Rgb([(x % 251) as u8, (y % 241) as u8, 7]))
        .save(img_dir.join("big.png"))
        .unwrap();
    let mask: Vec<u8> = (0..side * side).map(|i| ((i % side) / 700 % k as u32) as u8).collect();
    pal.encode(&mask, side as usize, side as usize)
        .unwrap()
        .save(lbl_dir.join("big.png"))
        .unwrap();
    drop(mask);
    let tiles = load_tiles(&img_dir, &lbl_dir, 512, 512, &pal).unwrap();
    let per_axis = tile_windows(6000, 512, 512).unwrap().len();
    let mut covered = vec![false; (side * side) as usize];
    for t in &tiles {
        let mut it = t.id.rsplit('_');
        let x0: usize = it.next().unwrap().parse().unwrap();
        let y0: usize = it.next().unwrap().parse().unwrap();
        for y in y0..y0 + 512 {
            covered[y * side as usize + x0..y * side as usize + x0 + 512].fill(true);
        }
    }
    let all_covered = covered.iter().all(|&c| c);
    let tiling = tiles.len() == 144 && per_axis == 12 && all_covered;

    let pass = ckpt && palette && tiling;
    verdict(
        9,
        "pipeline round-trips",
        pass,
        &format!(
            "checkpoint save/load/save identical: {ckpt}; palette bijective: {palette}; \
             6000x6000 -> {} tiles ({per_axis} per axis), every pixel covered: {all_covered}",
            tiles.len()
        ),
        start,
    );
    assert!(pass);
}
