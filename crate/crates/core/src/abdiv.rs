//! Attention boundary divergence: per-pixel KL between the attention rows of
//! opposite neighbours, and the μ ± σ ternary labelling derived from it.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::AggregatedAttention;
use crate::iep::{row_kl_unchecked, DEFAULT_EPSILON};
use crate::tensor_io::PixelGrid;

pub const EDGE: i8 = 1;
pub const INTERIOR: i8 = 0;
pub const UNCERTAIN: i8 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum AbdivError {
    #[error("attention width {0} is below the minimum of 3")]
    TooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    #[default]
    Four,
    Eight,
}

impl Neighborhood {
    /// Offsets `(dy, dx)` of the "forward" member of each opposite pair; the
    /// other member sits at the negated offset.
    fn pair_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Neighborhood::Four => &[(1, 0), (0, 1)],
            Neighborhood::Eight => &[(1, 0), (0, 1), (1, 1), (1, -1)],
        }
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Neighborhood::Four => "four",
            Neighborhood::Eight => "eight",
        })
    }
}

impl FromStr for Neighborhood {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "four" | "4" => Ok(Neighborhood::Four),
            "eight" | "8" => Ok(Neighborhood::Eight),
            _ => Err(format!(
                "unknown neighborhood {s:?} (expected four or eight)"
            )),
        }
    }
}

/// Raw boundary scores, one per pixel of the attention grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScoreMap {
    pub grid: PixelGrid<f64>,
}

impl EdgeScoreMap {
    pub fn max(&self) -> f64 {
        self.grid.values().iter().copied().fold(0.0, f64::max)
    }

    /// Scores divided by their maximum, for 8-bit export. An all-zero map stays zero.
    pub fn normalized(&self) -> PixelGrid<f64> {
        let max = self.max();
        self.grid.map(|&v| if max > 0.0 { v / max } else { 0.0 })
    }
}

/// Ternary labels plus the statistics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryEdgeMap {
    pub grid: PixelGrid<i8>,
    pub mu: f64,
    pub sigma: f64,
}

impl TernaryEdgeMap {
    pub fn count(&self, label: i8) -> usize {
        self.grid.values().iter().filter(|&&v| v == label).count()
    }
}

/// Sums `KL(row(p + o) ‖ row(p − o))` over the opposite pairs of the
/// neighbourhood. Pairs with a member outside the raster are skipped.
pub fn abdiv_score(
    sa: &AggregatedAttention,
    neighborhood: Neighborhood,
) -> Result<EdgeScoreMap, AbdivError> {
    let w = sa.width();
    if w < 3 {
        return Err(AbdivError::TooSmall(w));
    }
    let offsets = neighborhood.pair_offsets();
    let scores: Vec<f64> = (0..w * w)
        .into_par_iter()
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let inside =
                |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < w && (x as usize) < w;
            offsets
                .iter()
                .filter_map(|&(dy, dx)| {
                    let (fy, fx) = (y + dy, x + dx);
                    let (by, bx) = (y - dy, x - dx);
                    (inside(fy, fx) && inside(by, bx)).then(|| {
                        row_kl_unchecked(
                            sa.row_at(fy as usize, fx as usize),
                            sa.row_at(by as usize, bx as usize),
                            DEFAULT_EPSILON,
                        )
                    })
                })
                .sum()
        })
        .collect();
    Ok(EdgeScoreMap {
        grid: PixelGrid::new(w, w, scores).expect("w² scores"),
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Edge where `score > μ + σ`, interior where `score < μ − σ`, uncertain otherwise.
pub fn ternarize(scores: &EdgeScoreMap) -> TernaryEdgeMap {
    let (mu, sigma) = mean_std(scores.grid.values());
    let grid = scores.grid.map(|&s| {
        if s > mu + sigma {
            EDGE
        } else if s < mu - sigma {
            INTERIOR
        } else {
            UNCERTAIN
        }
    });
    TernaryEdgeMap { grid, mu, sigma }
}
