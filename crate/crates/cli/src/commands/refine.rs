use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use trace_edges::bgp::{refine, upscale_edges, EdgeMap, MaskSet};
use trace_edges::tensor_io::{read_mask_pgm, read_ternary_pgm, write_id_pgm, write_mask_pgm};

use super::{ensure_dir, read_mask_index, write_json, write_mask_index, MaskRecord};
use crate::config::PipelineConfig;
use crate::error::{CliError, WithPath};

/// Subdirectory of the output that receives the refined masks.
pub const REFINED_DIR: &str = "refined";
pub const COMPONENTS_MAP: &str = "components.pgm";
pub const REFINE_REPORT: &str = "refine.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineReport {
    pub input_masks: usize,
    pub output_masks: usize,
    pub components: u32,
    pub height: usize,
    pub width: usize,
}

fn read_edges(path: &Path, ternary: bool) -> Result<EdgeMap, CliError> {
    if ternary {
        let labels = read_ternary_pgm(path).at(path)?;
        Ok(EdgeMap::from_signed(&labels.map(|&v| f64::from(v))))
    } else {
        Ok(EdgeMap::new(read_mask_pgm(path).at(path)?)?)
    }
}

/// Components, propagation and merging of the masks listed in
/// `masks_dir/masks.jsonl`. A coarser edge map is upscaled to the mask size.
pub fn cmd_refine(
    masks_dir: &Path,
    edges_path: &Path,
    ternary: bool,
    config: &PipelineConfig,
) -> Result<RefineReport, CliError> {
    config.bgp.validate()?;
    let records = read_mask_index(masks_dir)?;
    let mut masks = Vec::with_capacity(records.len());
    for r in &records {
        let path = masks_dir.join(&r.file);
        masks.push(read_mask_pgm(&path).at(&path)?);
    }
    let labels = records.iter().map(|r| r.label).collect();
    let masks = MaskSet::new(masks, labels)?;
    let mut edges = read_edges(edges_path, ternary)?;

    let out_dir = config.output_dir.join(REFINED_DIR);
    ensure_dir(&out_dir)?;
    let Some((height, width)) = masks.shape() else {
        warn!("no masks listed in {}", masks_dir.display());
        write_mask_index(&out_dir, &[])?;
        let report = RefineReport {
            input_masks: 0,
            output_masks: 0,
            components: 0,
            height: edges.height(),
            width: edges.width(),
        };
        write_json(&config.output_dir.join(REFINE_REPORT), &report)?;
        return Ok(report);
    };
    if (edges.height(), edges.width()) != (height, width) {
        info!(
            "upscaling edges {}×{} to {}×{}",
            edges.height(),
            edges.width(),
            height,
            width
        );
        edges = upscale_edges(&edges, height, width)?;
    }

    let result = refine(&masks, &edges, &config.bgp, config.edge_threshold)?;
    let n_components = result
        .components
        .values()
        .iter()
        .copied()
        .max()
        .unwrap_or(0);
    let components_path = config.output_dir.join(COMPONENTS_MAP);
    write_id_pgm(&result.components, &components_path).at(&components_path)?;

    let mut index = Vec::with_capacity(result.merged.len());
    for (k, (mask, label)) in result
        .merged
        .masks()
        .iter()
        .zip(result.merged.labels())
        .enumerate()
    {
        let file = format!("mask_{k:03}.pgm");
        let path = out_dir.join(&file);
        write_mask_pgm(mask, &path).at(&path)?;
        index.push(MaskRecord {
            file,
            label: *label,
            score: None,
        });
    }
    write_mask_index(&out_dir, &index)?;
    let report = RefineReport {
        input_masks: masks.len(),
        output_masks: result.merged.len(),
        components: n_components,
        height,
        width,
    };
    info!(
        "{} masks in, {} out",
        report.input_masks, report.output_masks
    );
    write_json(&config.output_dir.join(REFINE_REPORT), &report)?;
    Ok(report)
}
