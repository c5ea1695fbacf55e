use log::info;
use serde::Serialize;
use trace_edges::iep::{select_iep, timestep_grid, DEFAULT_MAX_TIMESTEP};
use trace_edges::synthetic_oracle::{
    kl_second_order_check, measured_peak, predicted_peak, synth_attention,
    synth_two_instance_field, GammaSchedule, SimilarityField, StepReport,
};
use trace_edges::tensor_io::write_attention_stack;

use super::{ensure_dir, write_json};
use crate::config::{PipelineConfig, SynthArgs};
use crate::error::{CliError, WithPath};

pub const SYNTH_STACK: &str = "synth.atns";
pub const TWO_INSTANCE_STACK: &str = "two_instance.atns";
pub const SYNTH_REPORT: &str = "synth_report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub width: usize,
    pub bound: f64,
    pub seed: u64,
    pub contrast: f64,
    pub timesteps: Vec<u32>,
    pub gamma: Vec<f64>,
    pub steps: Vec<StepReport>,
    pub predicted_peak: Option<u32>,
    pub measured_peak: Option<u32>,
    /// Timestep chosen by the selection rule on the written stack.
    pub iep_t_star: u32,
    /// True when the measured peak is neither the first nor the last step.
    pub interior_peak: bool,
}

fn schedule(args: &SynthArgs) -> Result<GammaSchedule, CliError> {
    if args.stride == 0 {
        return Err(CliError::input("stride must be positive"));
    }
    Ok(match &args.gamma {
        Some(values) => {
            let timesteps = (0..values.len() as u32).map(|k| k * args.stride).collect();
            GammaSchedule::new(values.clone(), timesteps)?
        }
        None => GammaSchedule::smoothstep(timestep_grid(args.stride, DEFAULT_MAX_TIMESTEP))?,
    })
}

/// Writes a random-field stack over the schedule, a one-step two-instance
/// stack split at the middle column, and the second-order report.
pub fn cmd_synth(args: &SynthArgs, config: &PipelineConfig) -> Result<SynthReport, CliError> {
    if args.width < 2 {
        return Err(CliError::input("width must be at least 2"));
    }
    if !(args.bound.is_finite() && args.bound > 0.0) {
        return Err(CliError::input("bound must be positive"));
    }
    let gamma = schedule(args)?;
    let field = SimilarityField::random(args.width, args.bound, config.seed);
    let stack = synth_attention(&field, &gamma)?;

    let two = synth_two_instance_field(args.width, args.width, args.width / 2, args.contrast)?;
    let two_stack = synth_attention(&two, &GammaSchedule::new(vec![1.0], vec![0])?)?;

    let steps = kl_second_order_check(&field, &gamma);
    let iep = select_iep(&stack, config.metric)?;
    let measured = measured_peak(&steps);
    let ends = (
        steps.first().map(|s| s.timestep),
        steps.last().map(|s| s.timestep),
    );
    let interior_peak = measured.is_some_and(|t| Some(t) != ends.0 && Some(t) != ends.1);
    let report = SynthReport {
        width: args.width,
        bound: args.bound,
        seed: config.seed,
        contrast: args.contrast,
        timesteps: gamma.timesteps().to_vec(),
        gamma: gamma.values().to_vec(),
        predicted_peak: predicted_peak(&steps),
        measured_peak: measured,
        iep_t_star: iep.t_star,
        interior_peak,
        steps,
    };
    info!(
        "predicted peak {:?}, t* {}",
        report.predicted_peak, report.iep_t_star
    );

    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join(SYNTH_STACK);
    write_attention_stack(&stack, &path).at(&path)?;
    let path = config.output_dir.join(TWO_INSTANCE_STACK);
    write_attention_stack(&two_stack, &path).at(&path)?;
    write_json(&config.output_dir.join(SYNTH_REPORT), &report)?;
    Ok(report)
}
