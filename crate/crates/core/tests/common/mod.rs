#![allow(dead_code)]

use std::io::Write;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teformer::qco::probe::BinningProbe;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    values(a)
        .iter()
        .zip(values(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One line on the real stderr, visible without `--nocapture`.
pub fn report(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

#[derive(Debug, Clone)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub samples: Vec<GradSample>,
    /// Steps rejected because they crossed a soft-binning kink.
    pub rejected: usize,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.samples.iter().map(GradSample::rel_err).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} samples, {} kink-rejected, worst rel err {:.2e}",
            self.samples.len(),
            self.rejected,
            self.worst()
        )
    }
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn eval_signed<F: Fn() -> Tensor>(f: &F) -> (f64, Vec<Vec<i64>>) {
    let probe = BinningProbe::start();
    let v = scalar(&f());
    (v, probe.take())
}

fn set_elem(var: &Var, base: &[f64], index: usize, value: f64) {
    let mut v = base.to_vec();
    v[index] = value;
    let t = Tensor::from_vec(v, var.dims(), var.device())
        .unwrap()
        .to_dtype(var.dtype())
        .unwrap();
    var.set(&t).unwrap();
}

/// Central differences against backprop for the chosen `(var, element)`
/// pairs. `loss` must read the variables afresh on every call. A step whose
/// soft-binning segment signature differs from the base point's is rejected
/// and the next candidate element of the same variable is tried.
pub fn gradcheck<F: Fn() -> Tensor>(
    vars: &[(String, Var)],
    picks: &[(usize, usize)],
    loss: F,
    rng: &mut ChaCha8Rng,
) -> GradReport {
    let (_, base_sig) = eval_signed(&loss);
    let l = loss();
    let grads = l.backward().unwrap();
    let mut report = GradReport::default();
    for &(vi, first) in picks {
        let (name, var) = &vars[vi];
        let g = grads
            .get(var.as_tensor())
            .map(values)
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = values(var.as_tensor());
        let mut index = first;
        for attempt in 0..8 {
            let x0 = base[index];
            set_elem(var, &base, index, x0 + STEP);
            let (lp, sp) = eval_signed(&loss);
            set_elem(var, &base, index, x0 - STEP);
            let (lm, sm) = eval_signed(&loss);
            set_elem(var, &base, index, x0);
            if sp != base_sig || sm != base_sig {
                report.rejected += 1;
                if attempt < 7 {
                    index = rng.gen_range(0..base.len());
                }
                continue;
            }
            report.samples.push(GradSample {
                name: name.clone(),
                index,
                analytic: g[index],
                numeric: (lp - lm) / (2.0 * STEP),
            });
            break;
        }
    }
    report
}

/// `count` random elements spread over the given variables, every variable
/// receiving at least one.
pub fn spread_picks(vars: &[(String, Var)], count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut picks: Vec<(usize, usize)> = (0..vars.len())
        .map(|i| (i, rng.gen_range(0..vars[i].1.elem_count())))
        .collect();
    while picks.len() < count {
        let i = rng.gen_range(0..vars.len());
        picks.push((i, rng.gen_range(0..vars[i].1.elem_count())));
    }
    picks
}
