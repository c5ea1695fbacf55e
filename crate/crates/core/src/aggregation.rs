//! Fusion of mixed-resolution attention blocks into one map at the finest width.
//!
//! Query pixels of a coarse block are replicated onto the fine grid. The key
//! dimension is upsampled the same way and each replicated key receives
//! `1 / δ²` of the original mass, so every fused row stays a distribution.

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor_io::{AttentionBlock, PixelGrid};

/// Tolerance on the row sums of an [`AggregatedAttention`].
pub const ROW_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no blocks to aggregate")]
    EmptyInput,
    #[error("block width {width} does not divide the max width {max_width}")]
    IncompatibleWidths { width: usize, max_width: usize },
    #[error("map of width {width} needs {expected} entries, got {actual}")]
    ShapeMismatch {
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("row {row} is not a distribution (sum {sum})")]
    NonStochastic { row: usize, sum: f64 },
}

/// Row-stochastic `(w²) × (w²)` attention map at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedAttention {
    width: usize,
    map: Vec<f64>,
}

impl AggregatedAttention {
    /// Wraps an existing map after checking shape and row sums.
    pub fn new(width: usize, map: Vec<f64>) -> Result<Self, AggregationError> {
        let n = width * width;
        if width == 0 || map.len() != n * n {
            return Err(AggregationError::ShapeMismatch {
                width,
                expected: n * n,
                actual: map.len(),
            });
        }
        for (row, values) in map.chunks_exact(n).enumerate() {
            let sum: f64 = values.iter().sum();
            let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_range || !((sum - 1.0).abs() <= ROW_TOLERANCE) {
                return Err(AggregationError::NonStochastic { row, sum });
            }
        }
        Ok(Self { width, map })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels, `width²`.
    pub fn pixels(&self) -> usize {
        self.width * self.width
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    pub fn row(&self, query: usize) -> &[f64] {
        let n = self.pixels();
        &self.map[query * n..(query + 1) * n]
    }

    /// Attention row of the pixel at `(y, x)`.
    pub fn row_at(&self, y: usize, x: usize) -> &[f64] {
        self.row(y * self.width + x)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.map.chunks_exact(self.pixels())
    }

    /// Rescales every row to sum to exactly 1 in floating point terms.
    pub fn renormalized(mut self) -> Self {
        let n = self.pixels();
        self.map.par_chunks_mut(n).for_each(normalize_row);
        self
    }

    /// Lossy conversion to a single `f32` block, for writing `ATNS` files.
    pub fn to_block(&self) -> AttentionBlock {
        AttentionBlock::new(
            self.width as u32,
            self.map.iter().map(|&v| v as f32).collect(),
        )
        .expect("aggregated map has block shape")
    }

    /// Reshapes one attention row into a `width × width` key raster.
    pub fn row_grid(&self, query: usize) -> PixelGrid<f64> {
        PixelGrid::new(self.width, self.width, self.row(query).to_vec())
            .expect("row has width² entries")
    }
}

fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Borrowed view of one block for [`aggregate_maps`].
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    pub width: usize,
    pub map: &'a [f32],
}

impl<'a> From<&'a AttentionBlock> for BlockView<'a> {
    fn from(block: &'a AttentionBlock) -> Self {
        Self {
            width: block.width() as usize,
            map: block.map(),
        }
    }
}

/// Fuses the blocks of one timestep.
pub fn aggregate(blocks: &[AttentionBlock]) -> Result<AggregatedAttention, AggregationError> {
    let views: Vec<BlockView<'_>> = blocks.iter().map(BlockView::from).collect();
    aggregate_maps(&views)
}

pub fn aggregate_maps(blocks: &[BlockView<'_>]) -> Result<AggregatedAttention, AggregationError> {
    let max_width = blocks
        .iter()
        .map(|b| b.width)
        .max()
        .ok_or(AggregationError::EmptyInput)?;
    for b in blocks {
        if b.width == 0 || max_width % b.width != 0 {
            return Err(AggregationError::IncompatibleWidths {
                width: b.width,
                max_width,
            });
        }
        let n = b.width * b.width;
        if b.map.len() != n * n {
            return Err(AggregationError::ShapeMismatch {
                width: b.width,
                expected: n * n,
                actual: b.map.len(),
            });
        }
    }

    let n = max_width * max_width;
    let scale = 1.0 / blocks.len() as f64;
    let mut map = vec![0.0f64; n * n];
    map.par_chunks_mut(n).enumerate().for_each(|(query, out)| {
        let (qy, qx) = (query / max_width, query % max_width);
        for b in blocks {
            let delta = max_width / b.width;
            let src_pixels = b.width * b.width;
            let src_query = (qy / delta) * b.width + qx / delta;
            let src_row = &b.map[src_query * src_pixels..(src_query + 1) * src_pixels];
            let key_scale = scale / (delta * delta) as f64;
            for ky in 0..max_width {
                let src_y = (ky / delta) * b.width;
                let out_row = &mut out[ky * max_width..(ky + 1) * max_width];
                for (kx, slot) in out_row.iter_mut().enumerate() {
                    *slot += f64::from(src_row[src_y + kx / delta]) * key_scale;
                }
            }
        }
        normalize_row(out);
    });
    Ok(AggregatedAttention {
        width: max_width,
        map,
    })
}
