//! Subcommands of the `trace-edges` binary as library functions.

pub mod commands;
pub mod config;
pub mod error;

use log::info;

use crate::config::{Cli, Command, PipelineConfig};
use crate::error::CliError;

/// Runs one parsed invocation on a worker pool of the requested size.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = PipelineConfig::from(&cli.config);
    let mut builder = rayon::ThreadPoolBuilder::new();
    match cli.config.workers {
        Some(0) => return Err(CliError::input("--workers must be positive")),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &config))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn dispatch(command: &Command, config: &PipelineConfig) -> Result<(), CliError> {
    info!("writing to {}", config.output_dir.display());
    match command {
        Command::Iep { stack } => {
            let r = commands::cmd_iep(stack, config)?;
            println!("t_star {}", r.t_star);
        }
        Command::Edges { input } => {
            let r = commands::cmd_edges(input, config)?;
            println!(
                "edge {} interior {} uncertain {}",
                r.edge, r.interior, r.uncertain
            );
        }
        Command::Refine {
            masks_dir,
            edges,
            ternary,
        } => {
            let r = commands::cmd_refine(masks_dir, edges, *ternary, config)?;
            println!("masks {} -> {}", r.input_masks, r.output_masks);
        }
        Command::Eval {
            pred_dir,
            gt_dir,
            task,
        } => {
            print_json(&commands::cmd_eval(pred_dir, gt_dir, *task, config)?)?;
        }
        Command::Synth(args) => {
            let r = commands::cmd_synth(args, config)?;
            println!(
                "iep t_star {} predicted peak {:?}",
                r.iep_t_star, r.predicted_peak
            );
        }
    }
    Ok(())
}
