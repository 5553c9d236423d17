//! Confusion matrices, IoU/F1/accuracy and boundary F1.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance (Chebyshev distance, pixels) for matching boundary pixels.
pub const BOUNDARY_TOLERANCE: usize = 2;

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_maps(pred: &[u32], gt: &[u32], num_classes: usize, ignore_index: u32) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        cm.add(pred, gt, ignore_index)?;
        Ok(cm)
    }

    /// Scores every pixel whose ground truth is not `ignore_index`.
    pub fn add(&mut self, pred: &[u32], gt: &[u32], ignore_index: u32) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.num_classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_index {
                continue;
            }
            for label in [g, p] {
                if label as usize >= k {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_classes: k,
                    });
                }
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "merging {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, c)).sum()
    }
}

/// Matched/total boundary pixel counts, summed over images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub pred_matched: u64,
    pub pred_total: u64,
    pub gt_matched: u64,
    pub gt_total: u64,
}

impl BoundaryStats {
    pub fn merge(&mut self, o: &BoundaryStats) {
        self.pred_matched += o.pred_matched;
        self.pred_total += o.pred_total;
        self.gt_matched += o.gt_matched;
        self.gt_total += o.gt_total;
    }

    /// 1 when neither map has boundaries, 0 when only one does.
    pub fn f1(&self) -> f64 {
        match (self.pred_total, self.gt_total) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let p = self.pred_matched as f64 / self.pred_total as f64;
                let r = self.gt_matched as f64 / self.gt_total as f64;
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            }
        }
    }
}

/// Pixels with a 4-neighbor of a different label. Pixels labelled
/// `ignore_index` are never boundaries and do not create them.
pub fn boundary_map(labels: &[u32], width: usize, height: usize, ignore_index: u32) -> Vec<bool> {
    let at = |x: usize, y: usize| labels[y * width + x];
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let v = at(x, y);
            if v == ignore_index {
                continue;
            }
            let mut nb = Vec::with_capacity(4);
            if x > 0 {
                nb.push(at(x - 1, y));
            }
            if x + 1 < width {
                nb.push(at(x + 1, y));
            }
            if y > 0 {
                nb.push(at(x, y - 1));
            }
            if y + 1 < height {
                nb.push(at(x, y + 1));
            }
            out[y * width + x] = nb.iter().any(|&n| n != v && n != ignore_index);
        }
    }
    out
}

fn matched(from: &[bool], to: &[bool], width: usize, height: usize, tol: usize) -> u64 {
    let mut n = 0;
    for y in 0..height {
        for x in 0..width {
            if !from[y * width + x] {
                continue;
            }
            let (y0, y1) = (y.saturating_sub(tol), (y + tol).min(height - 1));
            let (x0, x1) = (x.saturating_sub(tol), (x + tol).min(width - 1));
            if (y0..=y1).any(|yy| (x0..=x1).any(|xx| to[yy * width + xx])) {
                n += 1;
            }
        }
    }
    n
}

/// Boundary agreement of one prediction with its ground truth. Ground-truth
/// ignore pixels are masked out of the prediction as well.
pub fn boundary_stats(pred: &[u32], gt: &[u32], width: usize, height: usize, ignore_index: u32) -> BoundaryStats {
    let masked: Vec<u32> = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| if g == ignore_index { ignore_index } else { p })
        .collect();
    let pb = boundary_map(&masked, width, height, ignore_index);
    let gb = boundary_map(gt, width, height, ignore_index);
    BoundaryStats {
        pred_matched: matched(&pb, &gb, width, height, BOUNDARY_TOLERANCE),
        pred_total: pb.iter().filter(|&&b| b).count() as u64,
        gt_matched: matched(&gb, &pb, width, height, BOUNDARY_TOLERANCE),
        gt_total: gb.iter().filter(|&&b| b).count() as u64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` for classes absent from both ground truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub miou: f64,
    pub mf1: f64,
    pub pa: f64,
    pub boundary_f1: Option<f64>,
    pub scored_pixels: u64,
}

/// Per-class IoU and F1, their means over present classes not listed in
/// `exclude`, and pixel accuracy.
pub fn compute_metrics(cm: &ConfusionMatrix, exclude: &[usize]) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let k = cm.num_classes();
    let mut iou = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let fp = cm.col_sum(c) as f64 - tp;
        let fn_ = cm.row_sum(c) as f64 - tp;
        if tp + fp + fn_ == 0.0 {
            iou.push(None);
            f1.push(None);
        } else {
            iou.push(Some(tp / (tp + fp + fn_)));
            f1.push(Some(2.0 * tp / (2.0 * tp + fp + fn_)));
        }
    }
    let mean = |v: &[Option<f64>]| {
        let kept: Vec<f64> = v
            .iter()
            .enumerate()
            .filter(|(c, _)| !exclude.contains(c))
            .filter_map(|(_, x)| *x)
            .collect();
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    Ok(MetricsReport {
        miou: mean(&iou),
        mf1: mean(&f1),
        pa: cm.trace() as f64 / total as f64,
        iou,
        f1,
        boundary_f1: None,
        scored_pixels: total,
    })
}
