//! Loss, optimization loop, checkpoints and evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, batch_tensors, Sample};
use crate::metrics::{boundary_stats, compute_metrics, BoundaryStats, ConfusionMatrix, MetricsReport};
use crate::model::Teformer;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Side of the square training crops; samples larger than this are
    /// cropped at a seed-determined position.
    pub crop: usize,
    pub poly_power: f64,
    pub augment: bool,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Validate every this many iterations (0: only at the end).
    pub eval_every: usize,
    /// Iterations averaged for the initial/final smoothed loss.
    pub smoothing_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 6e-5,
            weight_decay: 0.01,
            batch_size: 2,
            iterations: 300,
            crop: 64,
            poly_power: 1.0,
            augment: true,
            checkpoint_every: 0,
            eval_every: 0,
            smoothing_window: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.poly_power < 0.0 {
            return Err(Error::Config("lr must be positive, weight_decay and poly_power non-negative".into()));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.crop == 0 || self.smoothing_window == 0 {
            return Err(Error::Config("batch_size, iterations, crop and smoothing_window must be positive".into()));
        }
        Ok(())
    }

    /// Polynomial decay from `lr` to zero over the run.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.iterations as f64;
        self.lr * (1.0 - frac).max(0.0).powf(self.poly_power)
    }
}

/// Mean negative log-likelihood of the target class over pixels whose target
/// is not `ignore_index`. Logits are `(B, K, H, W)`, targets `(B, H, W)` `u32`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor, ignore_index: u32) -> Result<Tensor> {
    let (b, k, h, w) = logits.dims4()?;
    if targets.dims() != [b, h, w] {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} disagree",
            logits.dims(),
            targets.dims()
        )));
    }
    let targets = targets.to_dtype(DType::U32)?;
    let keep = targets.ne(ignore_index)?;
    let scored = keep.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if scored == 0.0 {
        log::warn!("every target pixel is ignored; loss defined as 0");
        return Ok((logits.sum_all()? * 0.0)?);
    }
    let safe = keep.where_cond(&targets, &targets.zeros_like()?)?;
    let flat: Vec<u32> = safe.flatten_all()?.to_vec1()?;
    if let Some(&bad) = flat.iter().find(|&&t| t as usize >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: k,
        });
    }
    let m = logits.max_keepdim(1)?.detach();
    let z = logits.broadcast_sub(&m)?;
    let lse = z.exp()?.sum_keepdim(1)?.log()?;
    let logp = z.broadcast_sub(&lse)?;
    let picked = logp.gather(&safe.unsqueeze(1)?.contiguous()?, 1)?.squeeze(1)?;
    let weights = keep.to_dtype(logits.dtype())?;
    Ok(((picked * weights)?.sum_all()? * (-1.0 / scored))?)
}

/// Per-iteration losses of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
    pub window: usize,
}

impl LossCurve {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn initial(&self) -> f64 {
        Self::mean(&self.losses[..self.window.min(self.losses.len())])
    }

    pub fn last(&self) -> f64 {
        let n = self.losses.len();
        Self::mean(&self.losses[n - self.window.min(n)..])
    }

    /// Moving average used for plotting.
    pub fn smoothed(&self) -> Vec<f64> {
        (0..self.losses.len())
            .map(|i| Self::mean(&self.losses[i + 1 - (i + 1).min(self.window)..=i]))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: LossCurve,
    pub checkpoints: Vec<PathBuf>,
    pub validations: Vec<(usize, MetricsReport)>,
    pub wall_time_s: f64,
}

/// What a training run needs besides the model.
pub struct TrainSetup<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub ignore_index: u8,
    pub exclude_classes: &'a [usize],
    /// Checkpoint directory; `None` disables checkpoints.
    pub out_dir: Option<&'a Path>,
}

fn crop(s: &Sample, side: usize, rng: &mut ChaCha8Rng) -> Sample {
    use rand::Rng;
    if s.width <= side && s.height <= side {
        return s.clone();
    }
    let (cw, ch) = (side.min(s.width), side.min(s.height));
    let x0 = rng.gen_range(0..=s.width - cw);
    let y0 = rng.gen_range(0..=s.height - ch);
    let mut image = Vec::with_capacity(3 * cw * ch);
    let mut mask = Vec::with_capacity(cw * ch);
    for y in y0..y0 + ch {
        let r = y * s.width;
        image.extend_from_slice(&s.image[3 * (r + x0)..3 * (r + x0 + cw)]);
        mask.extend_from_slice(&s.mask[r + x0..r + x0 + cw]);
    }
    Sample {
        id: s.id.clone(),
        width: cw,
        height: ch,
        image,
        mask,
    }
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.safetensors"))
}

/// Deterministic training loop: shuffled epochs, optional flips/rotations,
/// AdamW with decoupled weight decay and polynomial learning-rate decay.
pub fn train(model: &Teformer, setup: &TrainSetup, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if setup.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let num_classes = model.config().num_classes;
    for s in setup.train {
        s.validate(num_classes, setup.ignore_index)?;
    }
    if let Some(dir) = setup.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let start = Instant::now();
    let store = model.store();
    let mut opt = AdamW::new(
        store.vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = LossCurve {
        losses: Vec::with_capacity(cfg.iterations),
        window: cfg.smoothing_window,
    };
    let mut checkpoints = Vec::new();
    let mut validations = Vec::new();
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..setup.train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let mut s = crop(&setup.train[order[cursor]], cfg.crop, &mut rng);
            if cfg.augment {
                use rand::Rng;
                s = augment(&s, rng.gen());
            }
            batch.push(s);
            cursor += 1;
        }
        let refs: Vec<&Sample> = batch.iter().collect();
        let (images, targets) = batch_tensors(&refs, store.dtype(), store.device())?;
        let out = model.forward(&model.image(&images)?)?;
        let loss = cross_entropy(out.logits.tensor(), &targets, setup.ignore_index as u32)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            let batch_ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
            log::error!("non-finite loss {value} at iteration {it}, batch {batch_ids:?}");
            return Err(Error::NonFiniteLoss {
                iteration: it,
                batch_ids,
            });
        }
        curve.losses.push(value);
        opt.set_learning_rate(cfg.lr_at(it));
        opt.backward_step(&loss)?;
        let done = it + 1;
        if done % 50 == 0 || done == cfg.iterations {
            log::info!("iter {done}/{} loss {value:.4} lr {:.2e}", cfg.iterations, cfg.lr_at(it));
        }
        let last = done == cfg.iterations;
        if let Some(dir) = setup.out_dir {
            if last || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
                let p = checkpoint_path(dir, done);
                store.save(&p)?;
                checkpoints.push(p);
            }
        }
        if !setup.val.is_empty() && (last || (cfg.eval_every > 0 && done % cfg.eval_every == 0)) {
            let report = evaluate(model, setup.val, setup.ignore_index, setup.exclude_classes, cfg.batch_size)?;
            log::info!("iter {done} val mIoU {:.4}", report.miou);
            validations.push((done, report));
        }
    }
    Ok(TrainReport {
        curve,
        checkpoints,
        validations,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Predicted class maps for a set of equally sized samples.
pub fn predict_maps(model: &Teformer, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<u32>>> {
    let store = model.store();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = batch_tensors(&refs, store.dtype(), store.device())?;
        let maps = model.forward(&model.image(&images)?)?.class_map()?;
        for i in 0..chunk.len() {
            out.push(maps.get(i)?.flatten_all()?.to_vec1::<u32>()?);
        }
    }
    Ok(out)
}

/// Confusion matrix and boundary statistics over a sample set.
pub fn score(
    model: &Teformer,
    samples: &[Sample],
    ignore_index: u8,
    batch_size: usize,
) -> Result<(ConfusionMatrix, BoundaryStats)> {
    let k = model.config().num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let mut bs = BoundaryStats::default();
    let preds = predict_maps(model, samples, batch_size)?;
    for (s, pred) in samples.iter().zip(&preds) {
        let gt: Vec<u32> = s.mask.iter().map(|&m| m as u32).collect();
        cm.add(pred, &gt, ignore_index as u32)?;
        bs.merge(&boundary_stats(pred, &gt, s.width, s.height, ignore_index as u32));
    }
    Ok((cm, bs))
}

pub fn evaluate(
    model: &Teformer,
    samples: &[Sample],
    ignore_index: u8,
    exclude_classes: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    let (cm, bs) = score(model, samples, ignore_index, batch_size)?;
    let mut r = compute_metrics(&cm, exclude_classes)?;
    r.boundary_f1 = Some(bs.f1());
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn logits(v: Vec<f64>, k: usize) -> Tensor {
        let n = v.len() / k;
        Tensor::from_vec(v, (1, k, 1, n), &Device::Cpu).unwrap()
    }

    fn targets(v: Vec<u32>) -> Tensor {
        let n = v.len();
        Tensor::from_vec(v, (1, 1, n), &Device::Cpu).unwrap()
    }

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn loss_cases() {
        let l = scalar(cross_entropy(&logits(vec![0.0; 4], 4), &targets(vec![2]), 255).unwrap());
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l = scalar(cross_entropy(&logits(vec![1.0, 2.0, 3.0], 3), &targets(vec![2]), 255).unwrap());
        let want = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((l - want).abs() < 1e-12);
        let l = scalar(cross_entropy(&logits(vec![0.0, 30.0, 0.0], 3), &targets(vec![1]), 255).unwrap());
        assert!(l < 1e-9);
    }

    #[test]
    fn ignored_pixels() {
        // second pixel ignored: loss equals the first pixel's loss
        let lg = logits(vec![0.0, 5.0, 1.0, 0.0], 2);
        let a = scalar(cross_entropy(&lg, &targets(vec![0, 255]), 255).unwrap());
        let b = scalar(cross_entropy(&lg.narrow(3, 0, 1).unwrap(), &targets(vec![0]), 255).unwrap());
        assert!((a - b).abs() < 1e-12);
        let z = scalar(cross_entropy(&lg, &targets(vec![255, 255]), 255).unwrap());
        assert_eq!(z, 0.0);
        assert!(cross_entropy(&lg, &targets(vec![2, 0]), 255).is_err());
    }

    #[test]
    fn poly_schedule() {
        let c = TrainConfig {
            lr: 1.0,
            iterations: 4,
            ..Default::default()
        };
        let v: Vec<f64> = (0..5).map(|i| c.lr_at(i)).collect();
        assert_eq!(v, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn curve_windows() {
        let c = LossCurve {
            losses: vec![4.0, 2.0, 1.0, 1.0],
            window: 2,
        };
        assert_eq!((c.initial(), c.last()), (3.0, 1.0));
        assert_eq!(c.smoothed(), vec![4.0, 3.0, 1.5, 1.0]);
    }
}
