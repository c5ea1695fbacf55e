//! Readers and writers for attention stacks, rasters and panoptic label maps.
//!
//! `ATNS` layout (all integers little-endian):
//!
//! ```text
//! "ATNS"            4 bytes magic
//! version           u8, always 1
//! n_timesteps       u32
//! per timestep:
//!   timestep        u32
//!   n_blocks        u32
//!   per block:
//!     width         u32
//!     map           width^4 f32, row-major (query-major)
//! ```
//!
//! Rasters are binary PGM (`P5`). Soft and binary masks use maxval 255, segment
//! ids use maxval 65535 (big-endian samples, as PGM requires). A panoptic map is
//! a 16-bit id raster plus a `<name>.segments.jsonl` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ATNS_MAGIC: &[u8; 4] = b"ATNS";
pub const ATNS_VERSION: u8 = 1;

/// Row sums within this distance of 1 are accepted as-is.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Row sums within this distance of 1 are renormalized on read; beyond it the file is rejected.
pub const ROW_RENORM_LIMIT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes, expected \"ATNS\"")]
    BadMagic,
    #[error("unsupported ATNS version {0}")]
    UnsupportedVersion(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {row} of block {block} at timestep {timestep} sums to {sum}")]
    NonStochastic {
        timestep: u32,
        block: usize,
        row: usize,
        sum: f64,
    },
    #[error("entry {value} outside [0, 1] in block {block} at timestep {timestep}")]
    EntryOutOfRange {
        timestep: u32,
        block: usize,
        value: f32,
    },
    #[error("timesteps must be strictly increasing ({prev} then {next})")]
    NonIncreasingTimesteps { prev: u32, next: u32 },
    #[error("block width {width} does not divide max width {max_width} at timestep {timestep}")]
    IncompatibleWidths {
        timestep: u32,
        width: u32,
        max_width: u32,
    },
    #[error("bad PGM header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("segment id {0} does not fit a 16-bit raster")]
    IdOverflow(u32),
    #[error("bad segments sidecar: {0}")]
    BadSidecar(String),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

/// Row-major raster of `height * width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T> PixelGrid<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FormatError::ShapeMismatch(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if height.checked_mul(width) != Some(values.len()) {
            return Err(FormatError::ShapeMismatch(format!(
                "{height}x{width} grid needs {} values, got {}",
                height.saturating_mul(width),
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        let i = self.index(y, x);
        self.values[i] = value;
    }

    pub fn same_shape<U>(&self, other: &PixelGrid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> PixelGrid<U> {
        PixelGrid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> PixelGrid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height.saturating_mul(width)])
    }
}

/// One self-attention block: a `(width²) × (width²)` row-stochastic map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    width: u32,
    map: Vec<f32>,
}

impl AttentionBlock {
    pub fn new(width: u32, map: Vec<f32>) -> Result<Self> {
        let expected = block_len(width)
            .ok_or_else(|| FormatError::ShapeMismatch(format!("block width {width} too large")))?;
        if width == 0 {
            return Err(FormatError::ShapeMismatch(
                "block width must be positive".into(),
            ));
        }
        if map.len() as u64 != expected {
            return Err(FormatError::ShapeMismatch(format!(
                "block of width {width} needs {expected} entries, got {}",
                map.len()
            )));
        }
        Ok(Self { width, map })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Number of pixels (rows) in the block, `width²`.
    pub fn pixels(&self) -> usize {
        (self.width as usize) * (self.width as usize)
    }

    pub fn map(&self) -> &[f32] {
        &self.map
    }

    pub fn row(&self, query: usize) -> &[f32] {
        let n = self.pixels();
        &self.map[query * n..(query + 1) * n]
    }
}

/// All blocks hooked at one diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepAttention {
    pub timestep: u32,
    pub blocks: Vec<AttentionBlock>,
}

impl TimestepAttention {
    pub fn max_width(&self) -> u32 {
        self.blocks
            .iter()
            .map(AttentionBlock::width)
            .max()
            .unwrap_or(0)
    }
}

/// Per-timestep, per-block self-attention maps, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    steps: Vec<TimestepAttention>,
}

impl AttentionStack {
    /// Validates every stack invariant without modifying any value.
    pub fn new(steps: Vec<TimestepAttention>) -> Result<Self> {
        for pair in steps.windows(2) {
            if pair[1].timestep <= pair[0].timestep {
                return Err(FormatError::NonIncreasingTimesteps {
                    prev: pair[0].timestep,
                    next: pair[1].timestep,
                });
            }
        }
        for step in &steps {
            validate_step(step)?;
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[TimestepAttention] {
        &self.steps
    }

    pub fn timesteps(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.timestep).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn into_steps(self) -> Vec<TimestepAttention> {
        self.steps
    }
}

fn block_len(width: u32) -> Option<u64> {
    let w = u64::from(width);
    w.checked_mul(w)?.checked_mul(w)?.checked_mul(w)
}

fn validate_step(step: &TimestepAttention) -> Result<()> {
    if step.blocks.is_empty() {
        return Err(FormatError::ShapeMismatch(format!(
            "timestep {} has no blocks",
            step.timestep
        )));
    }
    let max_width = step.max_width();
    for (b, block) in step.blocks.iter().enumerate() {
        if !max_width.is_multiple_of(block.width) {
            return Err(FormatError::IncompatibleWidths {
                timestep: step.timestep,
                width: block.width,
                max_width,
            });
        }
        for row in 0..block.pixels() {
            let values = block.row(row);
            if let Some(&value) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(FormatError::EntryOutOfRange {
                    timestep: step.timestep,
                    block: b,
                    value,
                });
            }
            let sum = row_sum(values);
            if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                return Err(FormatError::NonStochastic {
                    timestep: step.timestep,
                    block: b,
                    row,
                    sum,
                });
            }
        }
    }
    Ok(())
}

fn row_sum(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v)).sum()
}

/// Cursor over an in-memory byte buffer with bounds-checked little-endian reads.
struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(FormatError::ShapeMismatch(format!(
                "payload ends inside {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses an `ATNS` buffer. Rows whose sums deviate from 1 by more than
/// [`ROW_SUM_TOLERANCE`] but at most [`ROW_RENORM_LIMIT`] are rescaled; rows
/// within the tolerance are returned bit-for-bit.
pub fn decode_attention_stack(bytes: &[u8]) -> Result<AttentionStack> {
    if bytes.len() < 4 || &bytes[..4] != ATNS_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut r = ByteReader { bytes, pos: 4 };
    let version = r.u8("version")?;
    if version != ATNS_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n_steps = r.u32("timestep count")?;
    let mut steps = Vec::new();
    for _ in 0..n_steps {
        let timestep = r.u32("timestep")?;
        let n_blocks = r.u32("block count")?;
        let mut blocks = Vec::new();
        for b in 0..n_blocks as usize {
            let width = r.u32("block width")?;
            if width == 0 {
                return Err(FormatError::ShapeMismatch(
                    "block width must be positive".into(),
                ));
            }
            let entries = block_len(width)
                .and_then(|n| n.checked_mul(4))
                .filter(|&n| n <= r.remaining() as u64)
                .ok_or_else(|| {
                    FormatError::ShapeMismatch(format!(
                        "block of declared width {width} exceeds the {} remaining payload bytes",
                        r.remaining()
                    ))
                })?;
            let raw = r.take(entries as usize, "block payload")?;
            let mut map: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            repair_rows(&mut map, width, timestep, b)?;
            blocks.push(AttentionBlock::new(width, map)?);
        }
        steps.push(TimestepAttention { timestep, blocks });
    }
    if r.remaining() != 0 {
        return Err(FormatError::ShapeMismatch(format!(
            "{} trailing bytes after the last block",
            r.remaining()
        )));
    }
    AttentionStack::new(steps)
}

fn repair_rows(map: &mut [f32], width: u32, timestep: u32, block: usize) -> Result<()> {
    let n = (width as usize) * (width as usize);
    for (row, values) in map.chunks_exact_mut(n).enumerate() {
        if let Some(&value) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(FormatError::EntryOutOfRange {
                timestep,
                block,
                value,
            });
        }
        let sum = row_sum(values);
        let deviation = (sum - 1.0).abs();
        if !(deviation <= ROW_RENORM_LIMIT) {
            return Err(FormatError::NonStochastic {
                timestep,
                block,
                row,
                sum,
            });
        }
        if deviation > ROW_SUM_TOLERANCE {
            for v in values.iter_mut() {
                *v = (f64::from(*v) / sum) as f32;
            }
        }
    }
    Ok(())
}

pub fn encode_attention_stack(stack: &AttentionStack) -> Vec<u8> {
    let payload: usize = stack
        .steps
        .iter()
        .flat_map(|s| s.blocks.iter())
        .map(|b| 4 + b.map.len() * 4)
        .sum();
    let mut out = Vec::with_capacity(9 + stack.steps.len() * 8 + payload);
    out.extend_from_slice(ATNS_MAGIC);
    out.push(ATNS_VERSION);
    out.extend_from_slice(&(stack.steps.len() as u32).to_le_bytes());
    for step in &stack.steps {
        out.extend_from_slice(&step.timestep.to_le_bytes());
        out.extend_from_slice(&(step.blocks.len() as u32).to_le_bytes());
        for block in &step.blocks {
            out.extend_from_slice(&block.width.to_le_bytes());
            for v in &block.map {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_attention_stack(path: impl AsRef<Path>) -> Result<AttentionStack> {
    decode_attention_stack(&fs::read(path)?)
}

pub fn write_attention_stack(stack: &AttentionStack, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_attention_stack(stack))?;
    Ok(())
}

/// A decoded PGM raster at its native bit depth.
#[derive(Debug, Clone, PartialEq)]
pub enum PgmRaster {
    Gray8(PixelGrid<u8>),
    Gray16(PixelGrid<u16>),
}

impl PgmRaster {
    pub fn height(&self) -> usize {
        match self {
            PgmRaster::Gray8(g) => g.height(),
            PgmRaster::Gray16(g) => g.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            PgmRaster::Gray8(g) => g.width(),
            PgmRaster::Gray16(g) => g.width(),
        }
    }
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(FormatError::BadHeader("header ends early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::BadHeader(format!(
            "expected a decimal number at byte {start}"
        )));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| FormatError::BadHeader("number out of range".into()))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmRaster> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FormatError::BadHeader("missing P5 magic".into()));
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(FormatError::BadHeader(format!(
            "empty raster {width}x{height}"
        )));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(FormatError::BadHeader(format!(
            "maxval {maxval} unsupported (expected 255 or 65535)"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(FormatError::BadHeader(
                "expected one whitespace byte after maxval".into(),
            ))
        }
    }
    let sample = if maxval == 255 { 1 } else { 2 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(sample))
        .ok_or_else(|| FormatError::BadHeader("raster dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let payload = &payload[..expected];
    if sample == 1 {
        Ok(PgmRaster::Gray8(PixelGrid::new(
            height,
            width,
            payload.to_vec(),
        )?))
    } else {
        let values = payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Ok(PgmRaster::Gray16(PixelGrid::new(height, width, values)?))
    }
}

pub fn encode_pgm8(grid: &PixelGrid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend_from_slice(grid.values());
    out
}

pub fn encode_pgm16(grid: &PixelGrid<u16>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    for v in grid.values() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PgmRaster> {
    decode_pgm(&fs::read(path)?)
}

/// Reads a mask raster: 8-bit samples become `v / 255`, 16-bit samples are
/// returned as raw integer ids.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<PixelGrid<f64>> {
    Ok(match read_pgm(path)? {
        PgmRaster::Gray8(g) => g.map(|&v| f64::from(v) / 255.0),
        PgmRaster::Gray16(g) => g.map(|&v| f64::from(v)),
    })
}

/// Quantizes values in `[0, 1]` to 8 bits (values outside are clamped).
pub fn quantize_mask(grid: &PixelGrid<f64>) -> PixelGrid<u8> {
    grid.map(|&v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    })
}

pub fn write_mask_pgm(grid: &PixelGrid<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm8(&quantize_mask(grid)))?;
    Ok(())
}

/// Reads a segment-id raster. 8-bit rasters are accepted as small ids.
pub fn read_id_pgm(path: impl AsRef<Path>) -> Result<PixelGrid<u32>> {
    Ok(match read_pgm(path)? {
        PgmRaster::Gray8(g) => g.map(|&v| u32::from(v)),
        PgmRaster::Gray16(g) => g.map(|&v| u32::from(v)),
    })
}

pub fn write_id_pgm(grid: &PixelGrid<u32>, path: impl AsRef<Path>) -> Result<()> {
    if let Some(&id) = grid.values().iter().find(|&&v| v > u32::from(u16::MAX)) {
        return Err(FormatError::IdOverflow(id));
    }
    let narrow = grid.map(|&v| v as u16);
    fs::write(path, encode_pgm16(&narrow))?;
    Ok(())
}

/// Ternary labels {1 edge, 0 interior, -1 uncertain} map to bytes {255, 0, 128}.
pub fn encode_ternary(grid: &PixelGrid<i8>) -> PixelGrid<u8> {
    grid.map(|&v| match v {
        1 => 255,
        0 => 0,
        _ => 128,
    })
}

pub fn write_ternary_pgm(grid: &PixelGrid<i8>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm8(&encode_ternary(grid)))?;
    Ok(())
}

pub fn read_ternary_pgm(path: impl AsRef<Path>) -> Result<PixelGrid<i8>> {
    match read_pgm(path)? {
        PgmRaster::Gray8(g) => {
            let mut out = Vec::with_capacity(g.len());
            for &v in g.values() {
                out.push(match v {
                    255 => 1,
                    0 => 0,
                    128 => -1,
                    other => {
                        return Err(FormatError::BadHeader(format!(
                            "byte {other} is not a ternary label"
                        )))
                    }
                });
            }
            PixelGrid::new(g.height(), g.width(), out)
        }
        PgmRaster::Gray16(_) => Err(FormatError::BadHeader(
            "ternary maps are 8-bit rasters".into(),
        )),
    }
}

/// One line of a `<name>.segments.jsonl` sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: u32,
    pub category: u32,
    pub is_thing: bool,
}

/// Segment-id raster with per-segment categories (id 0 is void).
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticLabelMap {
    grid: PixelGrid<u32>,
    categories: BTreeMap<u32, u32>,
    thing_flags: BTreeMap<u32, bool>,
}

impl PanopticLabelMap {
    pub fn new(
        grid: PixelGrid<u32>,
        categories: BTreeMap<u32, u32>,
        thing_flags: BTreeMap<u32, bool>,
    ) -> Result<Self> {
        if let Some(id) = grid
            .values()
            .iter()
            .find(|&&id| id != 0 && !categories.contains_key(&id))
        {
            return Err(FormatError::BadSidecar(format!(
                "segment {id} has no category record"
            )));
        }
        if let Some(cat) = categories.values().find(|c| !thing_flags.contains_key(c)) {
            return Err(FormatError::BadSidecar(format!(
                "category {cat} has no thing/stuff flag"
            )));
        }
        Ok(Self {
            grid,
            categories,
            thing_flags,
        })
    }

    /// Builds a map from sidecar records; conflicting thing flags for one category are rejected.
    pub fn from_records(grid: PixelGrid<u32>, records: &[SegmentRecord]) -> Result<Self> {
        let mut categories = BTreeMap::new();
        let mut thing_flags = BTreeMap::new();
        for rec in records {
            if rec.id == 0 {
                return Err(FormatError::BadSidecar(
                    "segment id 0 is reserved for void".into(),
                ));
            }
            if categories.insert(rec.id, rec.category).is_some() {
                return Err(FormatError::BadSidecar(format!(
                    "duplicate segment {}",
                    rec.id
                )));
            }
            if let Some(prev) = thing_flags.insert(rec.category, rec.is_thing) {
                if prev != rec.is_thing {
                    return Err(FormatError::BadSidecar(format!(
                        "category {} is marked both thing and stuff",
                        rec.category
                    )));
                }
            }
        }
        Self::new(grid, categories, thing_flags)
    }

    pub fn grid(&self) -> &PixelGrid<u32> {
        &self.grid
    }

    pub fn categories(&self) -> &BTreeMap<u32, u32> {
        &self.categories
    }

    pub fn thing_flags(&self) -> &BTreeMap<u32, bool> {
        &self.thing_flags
    }

    pub fn category_of(&self, segment: u32) -> Option<u32> {
        self.categories.get(&segment).copied()
    }

    pub fn is_thing(&self, category: u32) -> Option<bool> {
        self.thing_flags.get(&category).copied()
    }

    pub fn records(&self) -> Vec<SegmentRecord> {
        self.categories
            .iter()
            .map(|(&id, &category)| SegmentRecord {
                id,
                category,
                is_thing: self.thing_flags[&category],
            })
            .collect()
    }
}

/// `dir/name.pgm` → `dir/name.segments.jsonl`.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    let stem = raster
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    raster.with_file_name(format!("{stem}.segments.jsonl"))
}

pub fn parse_segments_jsonl(text: &str) -> Result<Vec<SegmentRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| FormatError::BadSidecar(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn read_panoptic(raster: impl AsRef<Path>) -> Result<PanopticLabelMap> {
    let raster = raster.as_ref();
    let grid = read_id_pgm(raster)?;
    let records = parse_segments_jsonl(&fs::read_to_string(sidecar_path(raster))?)?;
    PanopticLabelMap::from_records(grid, &records)
}

pub fn write_panoptic(pan: &PanopticLabelMap, raster: impl AsRef<Path>) -> Result<()> {
    let raster = raster.as_ref();
    write_id_pgm(&pan.grid, raster)?;
    let mut text = String::new();
    for rec in pan.records() {
        text.push_str(&serde_json::to_string(&rec).expect("segment record serializes"));
        text.push('\n');
    }
    fs::write(sidecar_path(raster), text)?;
    Ok(())
}
