use std::path::Path;

use log::info;
use serde::Serialize;
use trace_edges::abdiv::{abdiv_score, ternarize, EDGE, INTERIOR, UNCERTAIN};
use trace_edges::aggregation::aggregate;
use trace_edges::iep::{select_iep, IepError};
use trace_edges::tensor_io::{read_attention_stack, write_mask_pgm, write_ternary_pgm};

use super::{ensure_dir, write_json};
use crate::config::PipelineConfig;
use crate::error::{CliError, WithPath};

pub const SCORE_MAP: &str = "abdiv.pgm";
pub const TERNARY_MAP: &str = "ternary.pgm";
pub const EDGES_REPORT: &str = "edges.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgesReport {
    /// Selected timestep when the input held more than one.
    pub t_star: Option<u32>,
    pub width: usize,
    pub neighborhood: String,
    pub mu: f64,
    pub sigma: f64,
    pub max_score: f64,
    pub edge: usize,
    pub interior: usize,
    pub uncertain: usize,
}

/// Scores a one-step map directly, or the selected map of a longer stack.
/// Writes the max-normalized scores, the ternary labels and `edges.json`.
pub fn cmd_edges(input: &Path, config: &PipelineConfig) -> Result<EdgesReport, CliError> {
    let stack = read_attention_stack(input).at(input)?;
    let (sa, t_star) = if stack.len() >= 2 {
        let result = select_iep(&stack, config.metric)?;
        (result.selected_map, Some(result.t_star))
    } else {
        let step = &stack.steps()[0];
        let sa = aggregate(&step.blocks).map_err(|source| IepError::Aggregation {
            timestep: step.timestep,
            source,
        })?;
        (sa, None)
    };
    let scores = abdiv_score(&sa, config.neighborhood)?;
    let ternary = ternarize(&scores);
    info!(
        "width {}: mu {:.6}, sigma {:.6}, {} edge pixels",
        sa.width(),
        ternary.mu,
        ternary.sigma,
        ternary.count(EDGE)
    );

    ensure_dir(&config.output_dir)?;
    let score_path = config.output_dir.join(SCORE_MAP);
    write_mask_pgm(&scores.normalized(), &score_path).at(&score_path)?;
    let ternary_path = config.output_dir.join(TERNARY_MAP);
    write_ternary_pgm(&ternary.grid, &ternary_path).at(&ternary_path)?;
    let report = EdgesReport {
        t_star,
        width: sa.width(),
        neighborhood: config.neighborhood.to_string(),
        mu: ternary.mu,
        sigma: ternary.sigma,
        max_score: scores.max(),
        edge: ternary.count(EDGE),
        interior: ternary.count(INTERIOR),
        uncertain: ternary.count(UNCERTAIN),
    };
    write_json(&config.output_dir.join(EDGES_REPORT), &report)?;
    Ok(report)
}
