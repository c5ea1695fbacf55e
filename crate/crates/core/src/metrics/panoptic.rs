//! Panoptic, segmentation and recognition quality.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{check_shape, MetricsError};
use crate::tensor_io::PanopticLabelMap;

/// Segments match when their IoU exceeds this, which makes matches unique.
pub const PQ_MATCH_IOU: f64 = 0.5;

/// Counts of one category, accumulated over images.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ClassStats {
    pub category: u32,
    pub is_thing: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_sum: f64,
}

impl ClassStats {
    fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    pub fn pq(&self) -> Option<f64> {
        let d = self.denominator();
        (d > 0.0).then(|| self.iou_sum / d)
    }

    pub fn sq(&self) -> Option<f64> {
        (self.denominator() > 0.0).then(|| {
            if self.tp > 0 {
                self.iou_sum / self.tp as f64
            } else {
                0.0
            }
        })
    }

    pub fn rq(&self) -> Option<f64> {
        let d = self.denominator();
        (d > 0.0).then(|| self.tp as f64 / d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanopticQuality {
    /// Pooled over all categories, so `pq == sq * rq` up to rounding.
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    /// Mean per-category PQ over thing categories present in the ground truth.
    pub pq_things: Option<f64>,
    pub pq_stuff: Option<f64>,
    pub per_class: Vec<ClassStats>,
}

/// Running totals over a sequence of images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanopticStats {
    classes: BTreeMap<u32, ClassStats>,
    gt_categories: BTreeSet<u32>,
}

impl PanopticStats {
    pub fn new() -> Self {
        Self::default()
    }

    fn class(&mut self, category: u32, is_thing: bool) -> &mut ClassStats {
        self.classes.entry(category).or_insert_with(|| ClassStats {
            category,
            is_thing,
            ..Default::default()
        })
    }

    /// Adds the matches of one image. Pixels that are void in the ground truth
    /// are left out of the union, and a leftover prediction lying mostly on
    /// void is not counted as a false positive.
    pub fn accumulate(
        &mut self,
        pred: &PanopticLabelMap,
        gt: &PanopticLabelMap,
    ) -> Result<(), MetricsError> {
        check_shape(gt.grid(), pred.grid())?;
        for (&cat, &flag) in pred.thing_flags() {
            if gt.is_thing(cat).is_some_and(|g| g != flag) {
                return Err(MetricsError::CategoryMismatch(cat));
            }
        }
        let mut pred_area: BTreeMap<u32, usize> = BTreeMap::new();
        let mut gt_area: BTreeMap<u32, usize> = BTreeMap::new();
        let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for (&p, &g) in pred.grid().values().iter().zip(gt.grid().values()) {
            if p != 0 {
                *pred_area.entry(p).or_default() += 1;
            }
            if g != 0 {
                *gt_area.entry(g).or_default() += 1;
            }
            if p != 0 {
                *inter.entry((p, g)).or_default() += 1;
            }
        }
        let void_overlap = |p: u32| inter.get(&(p, 0)).copied().unwrap_or(0);

        let mut matched_pred = BTreeSet::new();
        let mut matched_gt = BTreeSet::new();
        for (&(p, g), &i) in &inter {
            if g == 0 {
                continue;
            }
            let (pc, gc) = (pred.category_of(p), gt.category_of(g));
            if pc != gc {
                continue;
            }
            let union = pred_area[&p] + gt_area[&g] - i - void_overlap(p);
            let iou = i as f64 / union as f64;
            if iou > PQ_MATCH_IOU {
                matched_pred.insert(p);
                matched_gt.insert(g);
                let cat = gc.expect("segment has a category");
                let flag = gt.is_thing(cat).unwrap_or(false);
                let c = self.class(cat, flag);
                c.tp += 1;
                c.iou_sum += iou;
            }
        }
        for (&g, _) in gt_area.iter().filter(|(g, _)| !matched_gt.contains(*g)) {
            let cat = gt.category_of(g).expect("segment has a category");
            let flag = gt.is_thing(cat).unwrap_or(false);
            self.class(cat, flag).fn_ += 1;
        }
        for (&p, &area) in pred_area.iter().filter(|(p, _)| !matched_pred.contains(*p)) {
            if void_overlap(p) * 2 > area {
                continue;
            }
            let cat = pred.category_of(p).expect("segment has a category");
            let flag = gt.is_thing(cat).or(pred.is_thing(cat)).unwrap_or(false);
            self.class(cat, flag).fp += 1;
        }
        for &g in gt_area.keys() {
            self.gt_categories
                .insert(gt.category_of(g).expect("segment has a category"));
        }
        Ok(())
    }

    /// Folds another set of totals into this one.
    pub fn merge(&mut self, other: &PanopticStats) {
        for (cat, stats) in &other.classes {
            let c = self.class(*cat, stats.is_thing);
            c.tp += stats.tp;
            c.fp += stats.fp;
            c.fn_ += stats.fn_;
            c.iou_sum += stats.iou_sum;
        }
        self.gt_categories.extend(&other.gt_categories);
    }

    pub fn summary(&self) -> PanopticQuality {
        let mut total = ClassStats::default();
        for c in self.classes.values() {
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
            total.iou_sum += c.iou_sum;
        }
        let split_mean = |things: bool| {
            let values: Vec<f64> = self
                .classes
                .values()
                .filter(|c| c.is_thing == things && self.gt_categories.contains(&c.category))
                .filter_map(ClassStats::pq)
                .collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        PanopticQuality {
            pq: total.pq(),
            sq: total.sq(),
            rq: total.rq(),
            pq_things: split_mean(true),
            pq_stuff: split_mean(false),
            per_class: self.classes.values().cloned().collect(),
        }
    }
}

/// Quality of a single prediction against its ground truth.
pub fn panoptic_quality(
    pred: &PanopticLabelMap,
    gt: &PanopticLabelMap,
) -> Result<PanopticQuality, MetricsError> {
    let mut stats = PanopticStats::new();
    stats.accumulate(pred, gt)?;
    Ok(stats.summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{PixelGrid, SegmentRecord};

    fn pan(
        h: usize,
        w: usize,
        ids: impl Fn(usize, usize) -> u32,
        records: &[(u32, u32, bool)],
    ) -> PanopticLabelMap {
        let grid = PixelGrid::new(h, w, (0..h * w).map(|i| ids(i / w, i % w)).collect()).unwrap();
        let recs: Vec<SegmentRecord> = records
            .iter()
            .map(|&(id, category, is_thing)| SegmentRecord {
                id,
                category,
                is_thing,
            })
            .collect();
        PanopticLabelMap::from_records(grid, &recs).unwrap()
    }

    #[test]
    fn identical_maps() {
        let gt = pan(
            4,
            6,
            |_, x| if x < 3 { 1 } else { 2 },
            &[(1, 1, true), (2, 5, false)],
        );
        let q = panoptic_quality(&gt, &gt).unwrap();
        assert_eq!((q.pq, q.sq, q.rq), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(q.pq_things, Some(1.0));
        assert_eq!(q.pq_stuff, Some(1.0));
    }

    #[test]
    fn hand_case() {
        // gt: columns 0-4 of a 10×10 map; pred: columns 0-3 (IoU 0.8) plus a
        // spurious segment on column 4
        let gt = pan(10, 10, |_, x| u32::from(x < 5), &[(1, 1, true)]);
        let pred = pan(
            10,
            10,
            |_, x| match x {
                0..=3 => 1,
                4 => 2,
                _ => 0,
            },
            &[(1, 1, true), (2, 1, true)],
        );
        let q = panoptic_quality(&pred, &gt).unwrap();
        assert!((q.sq.unwrap() - 0.8).abs() < 1e-12);
        assert!((q.rq.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((q.pq.unwrap() - 0.8 / 1.5).abs() < 1e-12);
        assert!((q.pq.unwrap() - 0.5333).abs() < 1e-4);
    }

    #[test]
    fn wrong_categories_score_zero() {
        let gt = pan(
            4,
            4,
            |y, _| if y < 2 { 1 } else { 2 },
            &[(1, 1, true), (2, 2, true)],
        );
        let pred = pan(
            4,
            4,
            |y, _| if y < 2 { 1 } else { 2 },
            &[(1, 2, true), (2, 1, true)],
        );
        let q = panoptic_quality(&pred, &gt).unwrap();
        assert_eq!(q.pq, Some(0.0));
        assert_eq!(q.per_class.iter().map(|c| c.fp).sum::<usize>(), 2);
    }

    #[test]
    fn void_pixels_leave_the_union() {
        // gt: segment on the top half, void below; pred covers everything
        let gt = pan(4, 4, |y, _| u32::from(y < 2), &[(1, 1, false)]);
        let pred = pan(4, 4, |_, _| 1, &[(1, 1, false)]);
        let q = panoptic_quality(&pred, &gt).unwrap();
        assert_eq!(q.pq, Some(1.0));
        // a prediction lying mostly on void is ignored
        let pred = pan(
            4,
            4,
            |y, _| if y < 2 { 1 } else { 2 },
            &[(1, 1, false), (2, 3, true)],
        );
        let q = panoptic_quality(&pred, &gt).unwrap();
        assert_eq!(q.pq, Some(1.0));
    }

    #[test]
    fn category_flag_conflict() {
        let gt = pan(2, 2, |_, _| 1, &[(1, 1, true)]);
        let pred = pan(2, 2, |_, _| 1, &[(1, 1, false)]);
        assert_eq!(
            panoptic_quality(&pred, &gt),
            Err(MetricsError::CategoryMismatch(1))
        );
    }

    #[test]
    fn empty_maps_are_undefined() {
        let gt = pan(2, 2, |_, _| 0, &[]);
        let q = panoptic_quality(&gt, &gt).unwrap();
        assert_eq!(q.pq, None);
        assert_eq!(q.pq_things, None);
    }

    #[test]
    fn accumulation_pools_counts() {
        let gt = pan(10, 10, |_, x| u32::from(x < 5), &[(1, 1, true)]);
        let good = gt.clone();
        let miss = pan(10, 10, |_, _| 0, &[]);
        let mut stats = PanopticStats::new();
        stats.accumulate(&good, &gt).unwrap();
        stats.accumulate(&miss, &gt).unwrap();
        let q = stats.summary();
        assert!((q.rq.unwrap() - 1.0 / 1.5).abs() < 1e-12);
        let mut merged = PanopticStats::new();
        let mut a = PanopticStats::new();
        a.accumulate(&good, &gt).unwrap();
        let mut b = PanopticStats::new();
        b.accumulate(&miss, &gt).unwrap();
        merged.merge(&a);
        merged.merge(&b);
        assert_eq!(merged.summary(), q);
    }
}
