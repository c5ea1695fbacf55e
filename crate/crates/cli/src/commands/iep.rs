use std::path::Path;

use log::info;
use serde::Serialize;
use trace_edges::iep::select_iep;
use trace_edges::tensor_io::{
    read_attention_stack, write_attention_stack, AttentionStack, TimestepAttention,
};

use super::{ensure_dir, write_json};
use crate::config::PipelineConfig;
use crate::error::{CliError, WithPath};

pub const IEP_REPORT: &str = "iep.json";
pub const SA_INST: &str = "sa_inst.atns";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepValue {
    pub t: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IepReport {
    pub t_star: u32,
    pub metric: String,
    pub divergences: Vec<StepValue>,
}

/// Writes `iep.json` and the selected map as a one-step `sa_inst.atns`.
pub fn cmd_iep(stack_path: &Path, config: &PipelineConfig) -> Result<IepReport, CliError> {
    let stack = read_attention_stack(stack_path).at(stack_path)?;
    info!(
        "read {} timesteps from {}",
        stack.len(),
        stack_path.display()
    );
    let result = select_iep(&stack, config.metric)?;
    info!("t* = {}", result.t_star);

    ensure_dir(&config.output_dir)?;
    let report = IepReport {
        t_star: result.t_star,
        metric: config.metric.name().to_string(),
        divergences: result
            .per_step_divergence
            .iter()
            .map(|&(t, value)| StepValue { t, value })
            .collect(),
    };
    write_json(&config.output_dir.join(IEP_REPORT), &report)?;

    let sa = AttentionStack::new(vec![TimestepAttention {
        timestep: result.t_star,
        blocks: vec![result.selected_map.to_block()],
    }])
    .map_err(|e| CliError::Internal(format!("selected map is not a valid stack: {e}")))?;
    let sa_path = config.output_dir.join(SA_INST);
    write_attention_stack(&sa, &sa_path).at(&sa_path)?;
    Ok(report)
}
