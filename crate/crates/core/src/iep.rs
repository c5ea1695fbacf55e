//! Instance emergence point: the timestep at which consecutive aggregated
//! attention maps diverge the most.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate, AggregatedAttention, AggregationError};
use crate::tensor_io::AttentionStack;

/// Smoothing added to every `q` entry before taking logs.
pub const DEFAULT_EPSILON: f64 = 1e-10;
pub const DEFAULT_STRIDE: u32 = 100;
pub const DEFAULT_MAX_TIMESTEP: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum IepError {
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("maps have different widths ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("need at least two timesteps, got {0}")]
    TooFewTimesteps(usize),
    #[error("timestep {timestep}: {source}")]
    Aggregation {
        timestep: u32,
        #[source]
        source: AggregationError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMetric {
    #[default]
    Kl,
    Jsd,
    Mse,
    Mae,
    EntropyDiff,
    Wasserstein1,
}

impl DivergenceMetric {
    pub const ALL: [DivergenceMetric; 6] = [
        DivergenceMetric::Kl,
        DivergenceMetric::Jsd,
        DivergenceMetric::Mse,
        DivergenceMetric::Mae,
        DivergenceMetric::EntropyDiff,
        DivergenceMetric::Wasserstein1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceMetric::Kl => "kl",
            DivergenceMetric::Jsd => "jsd",
            DivergenceMetric::Mse => "mse",
            DivergenceMetric::Mae => "mae",
            DivergenceMetric::EntropyDiff => "entropydiff",
            DivergenceMetric::Wasserstein1 => "wasserstein1",
        }
    }
}

impl fmt::Display for DivergenceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .or(match lower.as_str() {
                "entropy" | "entropy-diff" => Some(DivergenceMetric::EntropyDiff),
                "w1" | "wasserstein" => Some(DivergenceMetric::Wasserstein1),
                _ => None,
            })
            .ok_or_else(|| format!("unknown divergence metric {s:?}"))
    }
}

/// `KL(p ‖ q)` with `q` smoothed by `epsilon` and renormalized. Terms with
/// `p_i = 0` contribute nothing; the result is clamped at zero.
pub fn row_kl(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, IepError> {
    if p.len() != q.len() {
        return Err(IepError::LengthMismatch(p.len(), q.len()));
    }
    Ok(row_kl_unchecked(p, q, epsilon))
}

pub(crate) fn row_kl_unchecked(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    let q_total: f64 = q.iter().sum::<f64>() + epsilon * q.len() as f64;
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi * q_total / (qi + epsilon)).ln())
        .sum();
    kl.max(0.0)
}

/// Jensen-Shannon divergence, `½KL(p‖m) + ½KL(q‖m)` with `m = (p+q)/2`.
pub fn row_jsd(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, IepError> {
    if p.len() != q.len() {
        return Err(IepError::LengthMismatch(p.len(), q.len()));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * row_kl_unchecked(p, &m, epsilon) + 0.5 * row_kl_unchecked(q, &m, epsilon))
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn row_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// W₁ between two non-negative vectors, each renormalized to unit mass and
/// placed on the evenly spaced support `k / len`.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64, IepError> {
    if p.len() != q.len() {
        return Err(IepError::LengthMismatch(p.len(), q.len()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if p.len() < 2 || sp <= 0.0 || sq <= 0.0 {
        return Ok(0.0);
    }
    let step = 1.0 / p.len() as f64;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p[..p.len() - 1].iter().zip(&q[..q.len() - 1]) {
        cp += a / sp;
        cq += b / sq;
        total += (cp - cq).abs() * step;
    }
    Ok(total)
}

fn mean_row_entropy(map: &AggregatedAttention) -> f64 {
    map.rows().map(row_entropy).sum::<f64>() / map.pixels() as f64
}

/// Map-level divergence under `metric`. Row-wise metrics are averaged over
/// query rows; elementwise metrics over all entries.
pub fn map_divergence(
    prev: &AggregatedAttention,
    curr: &AggregatedAttention,
    metric: DivergenceMetric,
) -> Result<f64, IepError> {
    if prev.width() != curr.width() {
        return Err(IepError::WidthMismatch(prev.width(), curr.width()));
    }
    let rows = prev.pixels() as f64;
    let entries = prev.map().len() as f64;
    let pairs = || prev.rows().zip(curr.rows());
    Ok(match metric {
        DivergenceMetric::Kl => {
            pairs()
                .map(|(p, q)| row_kl_unchecked(p, q, DEFAULT_EPSILON))
                .sum::<f64>()
                / rows
        }
        DivergenceMetric::Jsd => {
            let mut total = 0.0;
            for (p, q) in pairs() {
                total += row_jsd(p, q, DEFAULT_EPSILON)?;
            }
            total / rows
        }
        DivergenceMetric::Mse => {
            prev.map()
                .iter()
                .zip(curr.map())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / entries
        }
        DivergenceMetric::Mae => {
            prev.map()
                .iter()
                .zip(curr.map())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / entries
        }
        DivergenceMetric::EntropyDiff => (mean_row_entropy(prev) - mean_row_entropy(curr)).abs(),
        DivergenceMetric::Wasserstein1 => wasserstein1(prev.map(), curr.map())?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IepResult {
    pub t_star: u32,
    /// `(τ_n, divergence(τ_{n-1}, τ_n))` for every consecutive pair.
    pub per_step_divergence: Vec<(u32, f64)>,
    pub selected_map: AggregatedAttention,
}

/// Index of the first maximum; ties keep the earliest entry.
pub(crate) fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn aggregate_stack(stack: &AttentionStack) -> Result<Vec<AggregatedAttention>, IepError> {
    stack
        .steps()
        .par_iter()
        .map(|step| {
            aggregate(&step.blocks).map_err(|source| IepError::Aggregation {
                timestep: step.timestep,
                source,
            })
        })
        .collect()
}

pub fn select_iep(stack: &AttentionStack, metric: DivergenceMetric) -> Result<IepResult, IepError> {
    if stack.len() < 2 {
        return Err(IepError::TooFewTimesteps(stack.len()));
    }
    let maps = aggregate_stack(stack)?;
    let divergences: Vec<f64> = maps
        .par_windows(2)
        .map(|pair| map_divergence(&pair[0], &pair[1], metric))
        .collect::<Result<_, _>>()?;
    let timesteps = stack.timesteps();
    let best = first_argmax(divergences.iter().copied()).expect("at least one pair");
    let per_step_divergence = timesteps[1..].iter().copied().zip(divergences).collect();
    let selected_map = maps
        .into_iter()
        .nth(best + 1)
        .expect("map exists for every timestep")
        .renormalized();
    Ok(IepResult {
        t_star: timesteps[best + 1],
        per_step_divergence,
        selected_map,
    })
}

/// `0, stride, 2·stride, …` up to and including `max_timestep`.
pub fn timestep_grid(stride: u32, max_timestep: u32) -> Vec<u32> {
    assert!(stride > 0, "stride must be positive");
    (0..=max_timestep).step_by(stride as usize).collect()
}
