//! Boundary ground truth and threshold-swept precision/recall for edge maps.

use rayon::prelude::*;

use super::{check_shape, f1_score, MetricsError};
use crate::tensor_io::{PanopticLabelMap, PixelGrid};

/// Exact-pixel matching.
pub const DEFAULT_TOLERANCE_PX: usize = 0;

/// `0.01, 0.02, …, 1.00`.
pub fn edge_thresholds() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 100.0).collect()
}

/// A pixel is a boundary iff one of its 4-neighbours carries another label.
pub fn boundaries_from_labels(labels: &PixelGrid<u32>) -> PixelGrid<bool> {
    let (h, w) = (labels.height(), labels.width());
    let v = labels.values();
    let out = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            (y > 0 && v[i - w] != v[i])
                || (y + 1 < h && v[i + w] != v[i])
                || (x > 0 && v[i - 1] != v[i])
                || (x + 1 < w && v[i + 1] != v[i])
        })
        .collect();
    PixelGrid::new(h, w, out).expect("label shape")
}

pub fn gt_boundaries_from_panoptic(pan: &PanopticLabelMap) -> PixelGrid<bool> {
    boundaries_from_labels(pan.grid())
}

/// Per-threshold counts and scores for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEvalCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Matched prediction/ground-truth pairs per threshold.
    pub matched: Vec<usize>,
    /// Predicted edge pixels per threshold.
    pub predicted: Vec<usize>,
    pub gt_pixels: usize,
}

impl EdgeEvalCurve {
    fn from_counts(
        thresholds: Vec<f64>,
        matched: Vec<usize>,
        predicted: Vec<usize>,
        gt_pixels: usize,
    ) -> Self {
        let (mut precision, mut recall, mut f1) = (Vec::new(), Vec::new(), Vec::new());
        for (&m, &p) in matched.iter().zip(&predicted) {
            let (pr, rc) = precision_recall(m, p, gt_pixels);
            precision.push(pr);
            recall.push(rc);
            f1.push(f1_score(pr, rc));
        }
        Self {
            thresholds,
            precision,
            recall,
            f1,
            matched,
            predicted,
            gt_pixels,
        }
    }

    pub fn best_f1(&self) -> f64 {
        self.f1.iter().copied().fold(0.0, f64::max)
    }
}

/// An empty prediction has precision 1 and an empty ground truth recall 1.
fn precision_recall(matched: usize, predicted: usize, gt: usize) -> (f64, f64) {
    let p = if predicted == 0 {
        1.0
    } else {
        matched as f64 / predicted as f64
    };
    let r = if gt == 0 {
        1.0
    } else {
        matched as f64 / gt as f64
    };
    (p, r)
}

/// Number of one-to-one matches between predicted and gt pixels. Predicted
/// pixels are visited in raster order and take the nearest free gt pixel
/// within the Chebyshev tolerance (ties: Manhattan distance, then raster order).
fn count_matches(
    pred: &[bool],
    gt: &[bool],
    height: usize,
    width: usize,
    tolerance: usize,
) -> usize {
    if tolerance == 0 {
        return pred.iter().zip(gt).filter(|(p, g)| **p && **g).count();
    }
    let r = tolerance as isize;
    let mut offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .collect();
    offsets.sort_by_key(|&(dy, dx)| (dy.abs().max(dx.abs()), dy.abs() + dx.abs(), dy, dx));
    let mut taken = vec![false; gt.len()];
    let mut matched = 0;
    for (i, _) in pred.iter().enumerate().filter(|(_, p)| **p) {
        let (y, x) = ((i / width) as isize, (i % width) as isize);
        for &(dy, dx) in &offsets {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if gt[j] && !taken[j] {
                taken[j] = true;
                matched += 1;
                break;
            }
        }
    }
    matched
}

/// Sweeps the thresholds of [`edge_thresholds`]: pixels with `pred ≥ θ` are
/// predicted edges.
pub fn edge_pr_curve(
    pred: &PixelGrid<f64>,
    gt: &PixelGrid<bool>,
    tolerance_px: usize,
) -> Result<EdgeEvalCurve, MetricsError> {
    check_shape(gt, pred)?;
    let thresholds = edge_thresholds();
    let gt_pixels = gt.values().iter().filter(|&&g| g).count();
    let (matched, predicted): (Vec<usize>, Vec<usize>) = thresholds
        .iter()
        .map(|&theta| {
            let binary: Vec<bool> = pred.values().iter().map(|&v| v >= theta).collect();
            let n = binary.iter().filter(|&&b| b).count();
            let m = count_matches(&binary, gt.values(), gt.height(), gt.width(), tolerance_px);
            (m, n)
        })
        .unzip();
    Ok(EdgeEvalCurve::from_counts(
        thresholds, matched, predicted, gt_pixels,
    ))
}

/// Curves for a dataset, computed in parallel and returned in input order.
pub fn edge_pr_curves(
    pairs: &[(PixelGrid<f64>, PixelGrid<bool>)],
    tolerance_px: usize,
) -> Result<Vec<EdgeEvalCurve>, MetricsError> {
    pairs
        .par_iter()
        .map(|(pred, gt)| edge_pr_curve(pred, gt, tolerance_px))
        .collect()
}

/// Best F1 over thresholds of the counts pooled across all images, and the
/// threshold that attains it.
pub fn ods(curves: &[EdgeEvalCurve]) -> Result<(f64, f64), MetricsError> {
    let first = curves.first().ok_or(MetricsError::EmptyDataset)?;
    let mut best = (0.0, first.thresholds[0]);
    for (k, &theta) in first.thresholds.iter().enumerate() {
        let matched: usize = curves.iter().map(|c| c.matched[k]).sum();
        let predicted: usize = curves.iter().map(|c| c.predicted[k]).sum();
        let gt: usize = curves.iter().map(|c| c.gt_pixels).sum();
        let (p, r) = precision_recall(matched, predicted, gt);
        let f = f1_score(p, r);
        if f > best.0 {
            best = (f, theta);
        }
    }
    Ok(best)
}

/// Mean over images of the per-image best F1.
pub fn ois(curves: &[EdgeEvalCurve]) -> Result<f64, MetricsError> {
    if curves.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    Ok(curves.iter().map(EdgeEvalCurve::best_f1).sum::<f64>() / curves.len() as f64)
}
