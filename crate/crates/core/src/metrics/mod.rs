//! Evaluation metrics for edges, instance masks and panoptic maps, plus the
//! distillation losses.

use thiserror::Error;

mod edges;
mod instances;
mod losses;
mod panoptic;
mod skeleton;

pub use edges::{
    boundaries_from_labels, edge_pr_curve, edge_pr_curves, edge_thresholds,
    gt_boundaries_from_panoptic, ods, ois, EdgeEvalCurve, DEFAULT_TOLERANCE_PX,
};
pub use instances::{
    average_precision, average_recall, coco_iou_thresholds, map_coco, mask_iou, match_instances,
    recall_at, ImageInstances, Instance, MatchResult, DEFAULT_MAX_DETS, RECALL_POINTS,
};
pub use losses::{dice_loss, recon_mse};
pub use panoptic::{panoptic_quality, ClassStats, PanopticQuality, PanopticStats, PQ_MATCH_IOU};
pub use skeleton::{cl_dice, zhang_suen};

use crate::tensor_io::PixelGrid;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("category {0} is marked thing in one map and stuff in the other")]
    CategoryMismatch(u32),
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("no images to evaluate")]
    EmptyDataset,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub(crate) fn check_shape<A, B>(a: &PixelGrid<A>, b: &PixelGrid<B>) -> Result<(), MetricsError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch {
            expected: (a.height(), a.width()),
            actual: (b.height(), b.width()),
        })
    }
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}
