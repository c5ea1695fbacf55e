use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use trace_edges::bgp::MASK_BINARIZE;
use trace_edges::metrics::{
    average_precision, average_recall, boundaries_from_labels, cl_dice, edge_pr_curves, map_coco,
    ods, ois, ImageInstances, Instance, MetricsError, PanopticStats, DEFAULT_MAX_DETS,
};
use trace_edges::tensor_io::{read_mask_pgm, read_panoptic, read_pgm, PgmRaster, PixelGrid};

use super::{ensure_dir, file_name, list_dirs, list_files, read_mask_index, write_json};
use crate::config::{PipelineConfig, Task};
use crate::error::{CliError, WithPath};

pub const EVAL_REPORT: &str = "eval.json";
/// IoU threshold of the headline `ap` entry.
pub const AP_IOU: f64 = 0.5;

/// Every key is always present; metrics the task does not compute are null.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalReport {
    pub ods: Option<f64>,
    pub ois: Option<f64>,
    pub cldice: Option<f64>,
    pub ap: Option<f64>,
    pub ar100: Option<f64>,
    pub map_coco: Option<f64>,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub pq_things: Option<f64>,
    pub pq_stuff: Option<f64>,
}

fn counterpart(gt_dir: &Path, pred: &Path) -> Result<PathBuf, CliError> {
    let path = gt_dir.join(pred.file_name().unwrap_or_default());
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::input(format!(
            "no ground truth {} for prediction {}",
            path.display(),
            pred.display()
        )))
    }
}

/// 8-bit rasters mark edges with any non-zero byte; 16-bit rasters are
/// segment ids whose boundaries become the edges.
fn read_gt_edges(path: &Path) -> Result<PixelGrid<bool>, CliError> {
    Ok(match read_pgm(path).at(path)? {
        PgmRaster::Gray8(g) => g.map(|&v| v > 0),
        PgmRaster::Gray16(g) => boundaries_from_labels(&g.map(|&v| u32::from(v))),
    })
}

fn read_pred_edges(path: &Path) -> Result<PixelGrid<f64>, CliError> {
    match read_pgm(path).at(path)? {
        PgmRaster::Gray8(g) => Ok(g.map(|&v| f64::from(v) / 255.0)),
        PgmRaster::Gray16(_) => Err(CliError::input(format!(
            "{}: predicted edges must be an 8-bit raster",
            path.display()
        ))),
    }
}

fn eval_edges(
    pred_dir: &Path,
    gt_dir: &Path,
    config: &PipelineConfig,
) -> Result<EvalReport, CliError> {
    let preds = list_files(pred_dir, "pgm")?;
    if preds.is_empty() {
        return Err(MetricsError::EmptyDataset.into());
    }
    let pairs = preds
        .iter()
        .map(|p| {
            Ok((
                read_pred_edges(p)?,
                read_gt_edges(&counterpart(gt_dir, p)?)?,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let curves = edge_pr_curves(&pairs, config.tolerance_px)?;
    let cldice: Vec<f64> = pairs
        .par_iter()
        .map(|(pred, gt)| cl_dice(&pred.map(|&v| v >= config.edge_threshold), gt))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport {
        ods: Some(ods(&curves)?.0),
        ois: Some(ois(&curves)?),
        cldice: Some(cldice.iter().sum::<f64>() / cldice.len() as f64),
        ..Default::default()
    })
}

fn read_instances(dir: &Path) -> Result<Vec<Instance>, CliError> {
    read_mask_index(dir)?
        .iter()
        .map(|r| {
            let path = dir.join(&r.file);
            let mask = read_mask_pgm(&path).at(&path)?;
            Ok(Instance::new(
                mask.map(|&v| v >= MASK_BINARIZE),
                r.label.unwrap_or(0),
                r.score.unwrap_or(1.0),
            ))
        })
        .collect()
}

/// One subdirectory per image in both trees, each with its own mask index.
fn eval_instances(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport, CliError> {
    let images = list_dirs(gt_dir)?;
    if images.is_empty() {
        return Err(MetricsError::EmptyDataset.into());
    }
    let dataset = images
        .par_iter()
        .map(|gt| {
            let pred = pred_dir.join(file_name(gt));
            if !pred.is_dir() {
                return Err(CliError::input(format!(
                    "missing prediction directory {}",
                    pred.display()
                )));
            }
            Ok(ImageInstances {
                preds: read_instances(&pred)?,
                gts: read_instances(gt)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(EvalReport {
        ap: average_precision(&dataset, AP_IOU)?,
        ar100: average_recall(&dataset, DEFAULT_MAX_DETS)?,
        map_coco: map_coco(&dataset)?,
        ..Default::default()
    })
}

/// Segment-id rasters with sidecars, paired by file name.
fn eval_panoptic(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport, CliError> {
    let gts = list_files(gt_dir, "pgm")?;
    if gts.is_empty() {
        return Err(MetricsError::EmptyDataset.into());
    }
    let per_image = gts
        .par_iter()
        .map(|gt_path| {
            let pred_path = counterpart(pred_dir, gt_path)?;
            let gt = read_panoptic(gt_path).at(gt_path)?;
            let pred = read_panoptic(&pred_path).at(&pred_path)?;
            let mut stats = PanopticStats::new();
            stats.accumulate(&pred, &gt)?;
            Ok(stats)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut stats = PanopticStats::new();
    for s in &per_image {
        stats.merge(s);
    }
    let q = stats.summary();
    Ok(EvalReport {
        pq: q.pq,
        sq: q.sq,
        rq: q.rq,
        pq_things: q.pq_things,
        pq_stuff: q.pq_stuff,
        ..Default::default()
    })
}

pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    task: Task,
    config: &PipelineConfig,
) -> Result<EvalReport, CliError> {
    for dir in [pred_dir, gt_dir] {
        if !dir.is_dir() {
            return Err(CliError::input(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
    }
    let report = match task {
        Task::Edges => eval_edges(pred_dir, gt_dir, config)?,
        Task::Instances => eval_instances(pred_dir, gt_dir)?,
        Task::Panoptic => eval_panoptic(pred_dir, gt_dir)?,
    };
    ensure_dir(&config.output_dir)?;
    write_json(&config.output_dir.join(EVAL_REPORT), &report)?;
    Ok(report)
}
