//! Instance matching and COCO-style AP / AR over binary masks.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use super::{check_shape, MetricsError};
use crate::tensor_io::PixelGrid;

pub const DEFAULT_MAX_DETS: usize = 100;
/// Recall levels `0, 0.01, …, 1` of the interpolated precision curve.
pub const RECALL_POINTS: usize = 101;

/// `0.50, 0.55, …, 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// A binary mask with its category and (for predictions) confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mask: PixelGrid<bool>,
    pub category: u32,
    pub score: f64,
}

impl Instance {
    pub fn new(mask: PixelGrid<bool>, category: u32, score: f64) -> Self {
        Self {
            mask,
            category,
            score,
        }
    }

    pub fn area(&self) -> usize {
        self.mask.values().iter().filter(|&&v| v).count()
    }
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageInstances {
    pub preds: Vec<Instance>,
    pub gts: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    /// `(pred, gt, iou)` in matching order.
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
}

/// Intersection over union; two empty masks score 0.
pub fn mask_iou(a: &PixelGrid<bool>, b: &PixelGrid<bool>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn check_threshold(thr: f64) -> Result<(), MetricsError> {
    if thr > 0.0 && thr < 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(thr))
    }
}

fn check_shapes(preds: &[Instance], gts: &[Instance]) -> Result<(), MetricsError> {
    if let Some(first) = preds.iter().chain(gts).next() {
        for inst in preds.iter().chain(gts) {
            check_shape(&first.mask, &inst.mask)?;
        }
    }
    Ok(())
}

/// Indices sorted by descending score, ties by index.
fn confidence_order(preds: &[Instance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching by descending confidence: each prediction takes the free
/// ground truth of highest IoU (ties: lowest index) when that IoU exceeds
/// `iou_thr`. Categories are ignored here.
pub fn match_instances(
    preds: &[Instance],
    gts: &[Instance],
    iou_thr: f64,
) -> Result<MatchResult, MetricsError> {
    check_threshold(iou_thr)?;
    check_shapes(preds, gts)?;
    Ok(greedy_match(preds, gts, &confidence_order(preds), iou_thr))
}

fn greedy_match(
    preds: &[Instance],
    gts: &[Instance],
    order: &[usize],
    iou_thr: f64,
) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for &p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = mask_iou(&preds[p].mask, &gt.mask);
            if iou > iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                taken[g] = true;
                result.tp.push((p, g, iou));
            }
            None => result.fp.push(p),
        }
    }
    result.fn_ = (0..gts.len()).filter(|&g| !taken[g]).collect();
    result
}

/// `(score, image, prediction index, matched)`.
type Detection = (f64, usize, usize, bool);

/// Ranked detections of one category over the dataset: `(score, tp)` in
/// global confidence order, plus the number of ground-truth instances.
fn category_detections(
    dataset: &[ImageInstances],
    category: u32,
    iou_thr: f64,
    max_dets: usize,
) -> (Vec<(f64, bool)>, usize) {
    let per_image: Vec<(Vec<Detection>, usize)> = dataset
        .par_iter()
        .enumerate()
        .map(|(img, image)| {
            let preds: Vec<(usize, &Instance)> = image
                .preds
                .iter()
                .enumerate()
                .filter(|(_, p)| p.category == category)
                .collect();
            let gts: Vec<Instance> = image
                .gts
                .iter()
                .filter(|g| g.category == category)
                .cloned()
                .collect();
            let subset: Vec<Instance> = preds.iter().map(|(_, p)| (*p).clone()).collect();
            let mut order = confidence_order(&subset);
            order.truncate(max_dets);
            let m = greedy_match(&subset, &gts, &order, iou_thr);
            let mut dets: Vec<Detection> = order
                .iter()
                .map(|&k| (subset[k].score, img, preds[k].0, false))
                .collect();
            for &(p, _, _) in &m.tp {
                let pos = order
                    .iter()
                    .position(|&k| k == p)
                    .expect("matched pred is ranked");
                dets[pos].3 = true;
            }
            (dets, gts.len())
        })
        .collect();
    let n_gt = per_image.iter().map(|(_, n)| n).sum();
    let mut all: Vec<Detection> = per_image.into_iter().flat_map(|(d, _)| d).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (all.into_iter().map(|(s, _, _, tp)| (s, tp)).collect(), n_gt)
}

fn gt_categories(dataset: &[ImageInstances]) -> BTreeSet<u32> {
    dataset
        .iter()
        .flat_map(|i| i.gts.iter().map(|g| g.category))
        .collect()
}

/// 101-point interpolated AP of one ranked list.
fn interpolated_ap(dets: &[(f64, bool)], n_gt: usize) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for &(_, hit) in dets {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (1..precision.len()).rev() {
        precision[k - 1] = precision[k - 1].max(precision[k]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

fn validate(dataset: &[ImageInstances], iou_thr: f64) -> Result<(), MetricsError> {
    check_threshold(iou_thr)?;
    dataset
        .iter()
        .try_for_each(|img| check_shapes(&img.preds, &img.gts))
}

/// Mean over ground-truth categories of the per-category AP, or `None` when
/// the dataset has no ground truth at all.
pub fn average_precision(
    dataset: &[ImageInstances],
    iou_thr: f64,
) -> Result<Option<f64>, MetricsError> {
    validate(dataset, iou_thr)?;
    let cats = gt_categories(dataset);
    if cats.is_empty() {
        return Ok(None);
    }
    let sum: f64 = cats
        .iter()
        .map(|&c| {
            let (dets, n_gt) = category_detections(dataset, c, iou_thr, DEFAULT_MAX_DETS);
            interpolated_ap(&dets, n_gt)
        })
        .sum();
    Ok(Some(sum / cats.len() as f64))
}

/// AP averaged over [`coco_iou_thresholds`].
pub fn map_coco(dataset: &[ImageInstances]) -> Result<Option<f64>, MetricsError> {
    mean_over_grid(|thr| average_precision(dataset, thr))
}

/// Fraction of ground truth recovered with at most `max_dets` detections per
/// image and category, averaged over ground-truth categories.
pub fn recall_at(
    dataset: &[ImageInstances],
    iou_thr: f64,
    max_dets: usize,
) -> Result<Option<f64>, MetricsError> {
    validate(dataset, iou_thr)?;
    let cats = gt_categories(dataset);
    if cats.is_empty() {
        return Ok(None);
    }
    let sum: f64 = cats
        .iter()
        .map(|&c| {
            let (dets, n_gt) = category_detections(dataset, c, iou_thr, max_dets);
            dets.iter().filter(|d| d.1).count() as f64 / n_gt as f64
        })
        .sum();
    Ok(Some(sum / cats.len() as f64))
}

/// Recall averaged over [`coco_iou_thresholds`].
pub fn average_recall(
    dataset: &[ImageInstances],
    max_dets: usize,
) -> Result<Option<f64>, MetricsError> {
    mean_over_grid(|thr| recall_at(dataset, thr, max_dets))
}

fn mean_over_grid(
    f: impl Fn(f64) -> Result<Option<f64>, MetricsError>,
) -> Result<Option<f64>, MetricsError> {
    let grid = coco_iou_thresholds();
    let mut sum = 0.0;
    for &thr in &grid {
        match f(thr)? {
            Some(v) => sum += v,
            None => return Ok(None),
        }
    }
    Ok(Some(sum / grid.len() as f64))
}
