use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trace_edges::abdiv::Neighborhood;
use trace_edges::bgp::{
    AffinityParams, DEFAULT_BETA, DEFAULT_EDGE_THRESHOLD, DEFAULT_ITERATIONS, DEFAULT_RADIUS,
    DEFAULT_TAU_BGP,
};
use trace_edges::iep::{DivergenceMetric, DEFAULT_STRIDE};

#[derive(Debug, Parser)]
#[command(
    name = "trace-edges",
    version,
    about = "Instance edges from diffusion self-attention"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Inter-step divergence used to pick the emergence timestep
    #[arg(long, global = true, default_value = "kl")]
    pub metric: DivergenceMetric,
    /// Opposite-pair neighbourhood for boundary scores (four or eight)
    #[arg(long, global = true, default_value = "four")]
    pub neighborhood: Neighborhood,
    /// Affinity exponent
    #[arg(long, global = true, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    /// Random-walk steps
    #[arg(long, global = true, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: u32,
    /// Affinity radius in pixels
    #[arg(long, global = true, default_value_t = DEFAULT_RADIUS)]
    pub radius: usize,
    /// IoU above which refined masks merge
    #[arg(long, global = true, default_value_t = DEFAULT_TAU_BGP)]
    pub tau_bgp: f64,
    /// Edge probability at or above which a pixel separates components
    #[arg(long, global = true, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    pub edge_threshold: f64,
    /// Chebyshev tolerance for edge matching during evaluation
    #[arg(long, global = true, default_value_t = 0)]
    pub tolerance_px: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the number of logical cores)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory, created if missing
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Select the instance emergence timestep of an attention stack
    Iep { stack: PathBuf },
    /// Score boundaries and write ternary edge maps
    Edges { input: PathBuf },
    /// Propagate masks inside edges and merge duplicates
    Refine {
        /// Directory holding masks.jsonl and the mask rasters it lists
        masks_dir: PathBuf,
        /// 8-bit edge raster
        edges: PathBuf,
        /// Read the edge raster as a ternary map (uncertain pixels become non-edges)
        #[arg(long)]
        ternary: bool,
    },
    /// Compare predictions with ground truth
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
    },
    /// Write synthetic attention fixtures and the second-order report
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Edges,
    Instances,
    Panoptic,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Grid width of the synthetic attention
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Bound S on the random similarity logits
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    /// Explicit comma-separated gamma schedule; overrides the smoothstep default
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Timestep stride of the schedule grid
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: u32,
    /// Logit contrast of the two-instance fixture
    #[arg(long, default_value_t = 2.0)]
    pub contrast: f64,
}

/// Settings shared by every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub metric: DivergenceMetric,
    pub neighborhood: Neighborhood,
    pub bgp: AffinityParams,
    pub edge_threshold: f64,
    pub tolerance_px: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            metric: DivergenceMetric::Kl,
            neighborhood: Neighborhood::Four,
            bgp: AffinityParams::default(),
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            tolerance_px: 0,
            output_dir: PathBuf::from("."),
            seed: 0,
        }
    }
}

impl From<&ConfigArgs> for PipelineConfig {
    fn from(args: &ConfigArgs) -> Self {
        Self {
            metric: args.metric,
            neighborhood: args.neighborhood,
            bgp: AffinityParams {
                beta: args.beta,
                iterations: args.iters,
                search_radius: args.radius,
                tau_bgp: args.tau_bgp,
            },
            edge_threshold: args.edge_threshold,
            tolerance_px: args.tolerance_px,
            output_dir: args.out.clone(),
            seed: args.seed,
        }
    }
}
