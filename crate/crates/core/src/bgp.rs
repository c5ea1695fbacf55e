//! Boundary-guided propagation of instance masks.
//!
//! An edge map drives three steps: connected components with edge pixels as
//! separators, a random walk over path-product affinities that spreads each
//! mask inside its boundaries, and IoU-based merging of the results.

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor_io::PixelGrid;

pub const DEFAULT_BETA: f64 = 8.0;
pub const DEFAULT_ITERATIONS: u32 = 16;
pub const DEFAULT_RADIUS: usize = 5;
pub const DEFAULT_TAU_BGP: f64 = 0.5;
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.5;
/// Foreground cut used when masks are binarized for IoU.
pub const MASK_BINARIZE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum BgpError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cannot upscale {from:?} to smaller {to:?}")]
    DownscaleRequested {
        from: (usize, usize),
        to: (usize, usize),
    },
}

fn shape<T>(g: &PixelGrid<T>) -> (usize, usize) {
    (g.height(), g.width())
}

fn check_unit(values: &[f64]) -> Result<(), BgpError> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&v) => Err(BgpError::OutOfRange(v)),
        None => Ok(()),
    }
}

/// Boundary probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    grid: PixelGrid<f64>,
}

impl EdgeMap {
    pub fn new(grid: PixelGrid<f64>) -> Result<Self, BgpError> {
        check_unit(grid.values())?;
        Ok(Self { grid })
    }

    /// Maps a decoder output in `[-1, 1]` onto `[0, 1]` by clamping negatives
    /// (confident non-edge) to zero.
    pub fn from_signed(grid: &PixelGrid<f64>) -> Self {
        Self {
            grid: grid.map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            grid: PixelGrid::filled(height, width, 0.0).expect("positive dimensions"),
        }
    }

    pub fn grid(&self) -> &PixelGrid<f64> {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn into_grid(self) -> PixelGrid<f64> {
        self.grid
    }
}

/// Soft instance masks over one shared raster.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    masks: Vec<PixelGrid<f64>>,
    labels: Vec<Option<u32>>,
}

impl MaskSet {
    pub fn new(masks: Vec<PixelGrid<f64>>, labels: Vec<Option<u32>>) -> Result<Self, BgpError> {
        if labels.len() != masks.len() {
            return Err(BgpError::InvalidParams(format!(
                "{} labels for {} masks",
                labels.len(),
                masks.len()
            )));
        }
        if let Some(first) = masks.first() {
            for m in &masks {
                if !m.same_shape(first) {
                    return Err(BgpError::ShapeMismatch {
                        expected: shape(first),
                        actual: shape(m),
                    });
                }
                check_unit(m.values())?;
            }
        }
        Ok(Self { masks, labels })
    }

    pub fn unlabeled(masks: Vec<PixelGrid<f64>>) -> Result<Self, BgpError> {
        let labels = vec![None; masks.len()];
        Self::new(masks, labels)
    }

    pub fn masks(&self) -> &[PixelGrid<f64>] {
        &self.masks
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.masks.first().map(shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    /// Exponent applied elementwise to the affinities.
    pub beta: f64,
    /// Number of random-walk steps.
    pub iterations: u32,
    /// Chebyshev radius of the affinity neighbourhood.
    pub search_radius: usize,
    pub tau_bgp: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            search_radius: DEFAULT_RADIUS,
            tau_bgp: DEFAULT_TAU_BGP,
        }
    }
}

impl AffinityParams {
    pub fn validate(&self) -> Result<(), BgpError> {
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return Err(BgpError::InvalidParams(format!(
                "beta {} must be >= 1",
                self.beta
            )));
        }
        if self.iterations == 0 {
            return Err(BgpError::InvalidParams(
                "iterations must be positive".into(),
            ));
        }
        if self.search_radius == 0 {
            return Err(BgpError::InvalidParams(
                "search radius must be positive".into(),
            ));
        }
        if !(self.tau_bgp > 0.0 && self.tau_bgp < 1.0) {
            return Err(BgpError::InvalidParams(format!(
                "tau_bgp {} must lie in (0, 1)",
                self.tau_bgp
            )));
        }
        Ok(())
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so that roots stay the raster-first pixel
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// 4-connected components of the pixels with `edge < threshold`. Separator
/// pixels get id 0; components are numbered `1..=C` in raster order of their
/// first pixel.
pub fn connected_components(edges: &EdgeMap, threshold: f64) -> PixelGrid<u32> {
    let (h, w) = (edges.height(), edges.width());
    let open: Vec<bool> = edges.grid.values().iter().map(|&e| e < threshold).collect();
    let mut sets = DisjointSet::new(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !open[i] {
                continue;
            }
            if x > 0 && open[i - 1] {
                sets.union(i, i - 1);
            }
            if y > 0 && open[i - w] {
                sets.union(i, i - w);
            }
        }
    }
    let mut ids = vec![0u32; h * w];
    let mut root_id = vec![0u32; h * w];
    let mut next = 0u32;
    for i in 0..h * w {
        if !open[i] {
            continue;
        }
        let root = sets.find(i);
        if root_id[root] == 0 {
            next += 1;
            root_id[root] = next;
        }
        ids[i] = root_id[root];
    }
    PixelGrid::new(h, w, ids).expect("same shape as edges")
}

/// Inclusive Bresenham line between two raster points, as `(y, x)`.
pub fn bresenham(from: (usize, usize), to: (usize, usize)) -> Vec<(usize, usize)> {
    let (mut x, mut y) = (from.1 as isize, from.0 as isize);
    let (x1, y1) = (to.1 as isize, to.0 as isize);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((y as usize, x as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Symmetric affinities between every pixel and the pixels within a Chebyshev
/// radius, stored as sorted rows (the diagonal included).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    height: usize,
    width: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseAffinity {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    /// Stored affinity, or `None` for pairs outside the radius.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let row = &self.rows[i];
        row.binary_search_by_key(&(j as u32), |&(c, _)| c)
            .ok()
            .map(|k| row[k].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Affinity of a pair is the product of `1 − edge` over the Bresenham path
/// joining them, endpoints included. The path is always traced from the
/// raster-earlier endpoint so both orientations see the same pixels.
pub fn sparse_affinity(
    edges: &EdgeMap,
    params: &AffinityParams,
) -> Result<SparseAffinity, BgpError> {
    if params.search_radius == 0 {
        return Err(BgpError::InvalidParams(
            "search radius must be positive".into(),
        ));
    }
    let (h, w) = (edges.height(), edges.width());
    let r = params.search_radius as isize;
    let e = edges.grid.values();
    let rows = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut row = Vec::new();
            for ny in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for nx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    let j = ny as usize * w + nx as usize;
                    let (a, b) = if i <= j { (i, j) } else { (j, i) };
                    let affinity: f64 = bresenham((a / w, a % w), (b / w, b % w))
                        .into_iter()
                        .map(|(py, px)| 1.0 - e[py * w + px])
                        .product();
                    row.push((j as u32, affinity));
                }
            }
            row
        })
        .collect();
    Ok(SparseAffinity {
        height: h,
        width: w,
        rows,
    })
}

/// Row-stochastic random-walk transition matrix in sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(u32, f64)>>,
}

impl TransitionMatrix {
    /// `T = D⁻¹ A^∘β`; rows whose powered affinities sum to zero become a self-loop.
    pub fn from_affinity(affinity: &SparseAffinity, beta: f64) -> Self {
        let rows = affinity
            .rows
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                let powered: Vec<(u32, f64)> = row
                    .iter()
                    .map(|&(j, a)| (j, a.powf(beta)))
                    .filter(|&(_, a)| a > 0.0)
                    .collect();
                let degree: f64 = powered.iter().map(|&(_, a)| a).sum();
                if degree > 0.0 {
                    powered.into_iter().map(|(j, a)| (j, a / degree)).collect()
                } else {
                    vec![(i as u32, 1.0)]
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `out_i = Σ_j T_ij v_j`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, t)| t * v[j as usize]).sum())
            .collect()
    }

    /// Dense copy, for small grids and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; n];
                for &(j, t) in row {
                    dense[j as usize] = t;
                }
                dense
            })
            .collect()
    }
}

/// Runs `t` random-walk steps on each edge-suppressed mask, then rescales every
/// mask by its maximum and clamps to `[0, 1]`.
pub fn propagate(
    masks: &MaskSet,
    edges: &EdgeMap,
    params: &AffinityParams,
) -> Result<MaskSet, BgpError> {
    params.validate()?;
    let Some(mask_shape) = masks.shape() else {
        return Ok(masks.clone());
    };
    if mask_shape != shape(&edges.grid) {
        return Err(BgpError::ShapeMismatch {
            expected: shape(&edges.grid),
            actual: mask_shape,
        });
    }
    let affinity = sparse_affinity(edges, params)?;
    let transition = TransitionMatrix::from_affinity(&affinity, params.beta);
    let e = edges.grid.values();
    let propagated = masks
        .masks
        .par_iter()
        .map(|m| {
            let mut v: Vec<f64> = m
                .values()
                .iter()
                .zip(e)
                .map(|(a, b)| a * (1.0 - b))
                .collect();
            for _ in 0..params.iterations {
                v = transition.apply(&v);
            }
            max_normalize(&mut v);
            PixelGrid::new(mask_shape.0, mask_shape.1, v).expect("mask shape")
        })
        .collect();
    Ok(MaskSet {
        masks: propagated,
        labels: masks.labels.clone(),
    })
}

fn max_normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(0.0, f64::max);
    for x in v.iter_mut() {
        *x = if max > 0.0 {
            (*x / max).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
}

fn binarize(m: &PixelGrid<f64>) -> Vec<bool> {
    m.values().iter().map(|&v| v >= MASK_BINARIZE).collect()
}

/// IoU of two binary masks; two empty masks score 0.
pub fn binary_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Repeatedly replaces the highest-IoU pair above `tau` (ties: lowest index
/// pair) with its elementwise maximum, until no pair exceeds `tau`. The merged
/// mask takes the slot and label of the lower index.
pub fn merge_masks(masks: &MaskSet, tau: f64) -> MaskSet {
    let mut out = masks.clone();
    let mut bins: Vec<Vec<bool>> = out.masks.iter().map(binarize).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..bins.len() {
            for b in a + 1..bins.len() {
                let iou = binary_iou(&bins[a], &bins[b]);
                if iou > tau && best.is_none_or(|(_, _, v)| iou > v) {
                    best = Some((a, b, iou));
                }
            }
        }
        let Some((a, b, _)) = best else { break };
        let removed = out.masks.remove(b);
        out.labels.remove(b);
        bins.remove(b);
        for (x, y) in out.masks[a].values_mut().iter_mut().zip(removed.values()) {
            *x = x.max(*y);
        }
        bins[a] = binarize(&out.masks[a]);
    }
    out
}

/// Nearest-neighbour upscaling to `height × width`.
pub fn upscale_edges(edges: &EdgeMap, height: usize, width: usize) -> Result<EdgeMap, BgpError> {
    let (h, w) = (edges.height(), edges.width());
    if height < h || width < w {
        return Err(BgpError::DownscaleRequested {
            from: (h, w),
            to: (height, width),
        });
    }
    let src = edges.grid.values();
    let values = (0..height * width)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            src[(y * h / height) * w + x * w / width]
        })
        .collect();
    Ok(EdgeMap {
        grid: PixelGrid::new(height, width, values)
            .map_err(|_| BgpError::InvalidParams("target dimensions must be positive".into()))?,
    })
}

/// Zeroes the parts of each propagated mask lying in components that its
/// edge-suppressed seed never touched, then rescales by the maximum again.
/// Separator pixels (component 0) are left as propagated.
pub fn restrict_to_seed_components(
    propagated: &MaskSet,
    seeds: &MaskSet,
    edges: &EdgeMap,
    components: &PixelGrid<u32>,
) -> Result<MaskSet, BgpError> {
    if propagated.len() != seeds.len() {
        return Err(BgpError::InvalidParams(
            "seed and mask counts differ".into(),
        ));
    }
    let n_components = components.values().iter().copied().max().unwrap_or(0) as usize;
    let e = edges.grid.values();
    let masks = propagated
        .masks
        .iter()
        .zip(&seeds.masks)
        .map(|(p, s)| {
            if !p.same_shape(components) || !s.same_shape(components) {
                return Err(BgpError::ShapeMismatch {
                    expected: shape(components),
                    actual: shape(p),
                });
            }
            let mut seeded = vec![false; n_components + 1];
            for ((&c, &m), &edge) in components.values().iter().zip(s.values()).zip(e) {
                if m * (1.0 - edge) > 0.0 {
                    seeded[c as usize] = true;
                }
            }
            let mut v: Vec<f64> = p
                .values()
                .iter()
                .zip(components.values())
                .map(|(&x, &c)| if c == 0 || seeded[c as usize] { x } else { 0.0 })
                .collect();
            max_normalize(&mut v);
            Ok(PixelGrid::new(p.height(), p.width(), v).expect("mask shape"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MaskSet {
        masks,
        labels: propagated.labels.clone(),
    })
}

/// Output of the full refinement chain, with the intermediate stages kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub components: PixelGrid<u32>,
    pub propagated: MaskSet,
    pub merged: MaskSet,
}

/// Components, propagation, component restriction and merging, in that order.
pub fn refine(
    masks: &MaskSet,
    edges: &EdgeMap,
    params: &AffinityParams,
    edge_threshold: f64,
) -> Result<Refinement, BgpError> {
    params.validate()?;
    let components = connected_components(edges, edge_threshold);
    let propagated = propagate(masks, edges, params)?;
    let propagated = restrict_to_seed_components(&propagated, masks, edges, &components)?;
    let merged = merge_masks(&propagated, params.tau_bgp);
    Ok(Refinement {
        components,
        propagated,
        merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edges(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> EdgeMap {
        let values = (0..h * w).map(|i| f(i / w, i % w)).collect();
        EdgeMap::new(PixelGrid::new(h, w, values).unwrap()).unwrap()
    }

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> PixelGrid<f64> {
        let values = (0..h * w)
            .map(|i| if f(i / w, i % w) { 1.0 } else { 0.0 })
            .collect();
        PixelGrid::new(h, w, values).unwrap()
    }

    /// Reference labelling by breadth-first flood fill.
    fn flood_fill(e: &EdgeMap, threshold: f64) -> Vec<u32> {
        let (h, w) = (e.height(), e.width());
        let mut ids = vec![0u32; h * w];
        let mut next = 0;
        for start in 0..h * w {
            if ids[start] != 0 || e.grid.values()[start] >= threshold {
                continue;
            }
            next += 1;
            let mut queue = std::collections::VecDeque::from([start]);
            ids[start] = next;
            while let Some(p) = queue.pop_front() {
                let (y, x) = (p / w, p % w);
                let mut nbrs = Vec::new();
                if y > 0 {
                    nbrs.push(p - w)
                }
                if y + 1 < h {
                    nbrs.push(p + w)
                }
                if x > 0 {
                    nbrs.push(p - 1)
                }
                if x + 1 < w {
                    nbrs.push(p + 1)
                }
                for q in nbrs {
                    if ids[q] == 0 && e.grid.values()[q] < threshold {
                        ids[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
        ids
    }

    #[test]
    fn components_of_empty_map() {
        let cc = connected_components(&EdgeMap::zeros(4, 5), 0.5);
        assert!(cc.values().iter().all(|&c| c == 1));
    }

    #[test]
    fn vertical_line_splits_into_two() {
        let e = edges(5, 5, |_, x| if x == 2 { 1.0 } else { 0.0 });
        let cc = connected_components(&e, 0.5);
        for y in 0..5 {
            assert_eq!(*cc.get(y, 0), 1);
            assert_eq!(*cc.get(y, 1), 1);
            assert_eq!(*cc.get(y, 2), 0);
            assert_eq!(*cc.get(y, 3), 2);
            assert_eq!(*cc.get(y, 4), 2);
        }
    }

    #[test]
    fn broken_line_leaks() {
        let e = edges(5, 5, |y, x| if x == 2 && y != 3 { 1.0 } else { 0.0 });
        let cc = connected_components(&e, 0.5);
        assert_eq!(cc.values(), flood_fill(&e, 0.5).as_slice());
        assert_eq!(cc.values().iter().copied().max(), Some(1));
    }

    #[test]
    fn bresenham_endpoints_and_length() {
        assert_eq!(bresenham((0, 0), (0, 2)), vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(bresenham((2, 2), (2, 2)), vec![(2, 2)]);
        let line = bresenham((0, 0), (3, 5));
        assert_eq!(line.first(), Some(&(0, 0)));
        assert_eq!(line.last(), Some(&(3, 5)));
        assert_eq!(line.len(), 6);
        for pair in line.windows(2) {
            let dy = pair[0].0.abs_diff(pair[1].0);
            let dx = pair[0].1.abs_diff(pair[1].1);
            assert!(dy <= 1 && dx <= 1);
        }
    }

    #[test]
    fn affinity_examples() {
        let params = AffinityParams {
            search_radius: 2,
            ..Default::default()
        };
        let zero = sparse_affinity(&EdgeMap::zeros(4, 4), &params).unwrap();
        assert!((0..16).all(|i| zero.row(i).iter().all(|&(_, a)| a == 1.0)));

        let hard = edges(1, 3, |_, x| if x == 1 { 1.0 } else { 0.0 });
        let a = sparse_affinity(&hard, &params).unwrap();
        assert_eq!(a.get(0, 1), Some(0.0));
        assert_eq!(a.get(0, 2), Some(0.0));
        assert_eq!(a.get(0, 0), Some(1.0));

        let soft = edges(1, 3, |_, x| if x == 1 { 0.5 } else { 0.0 });
        let a = sparse_affinity(&soft, &params).unwrap();
        assert_eq!(a.get(0, 2), Some(0.5));
        assert_eq!(a.get(2, 0), Some(0.5));
    }

    #[test]
    fn affinity_respects_radius() {
        let params = AffinityParams {
            search_radius: 1,
            ..Default::default()
        };
        let a = sparse_affinity(&EdgeMap::zeros(5, 5), &params).unwrap();
        assert_eq!(a.get(0, 2), None);
        assert_eq!(a.row(12).len(), 9);
        assert_eq!(a.row(0).len(), 4);
    }

    #[test]
    fn uniform_mask_is_a_fixed_point() {
        let m = MaskSet::unlabeled(vec![mask(6, 6, |_, _| true)]).unwrap();
        let out = propagate(&m, &EdgeMap::zeros(6, 6), &AffinityParams::default()).unwrap();
        assert!(out.masks()[0]
            .values()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn seed_on_edges_is_suppressed() {
        let e = edges(4, 4, |_, x| if x == 1 { 1.0 } else { 0.0 });
        let m = MaskSet::unlabeled(vec![mask(4, 4, |_, x| x == 1)]).unwrap();
        let out = propagate(&m, &e, &AffinityParams::default()).unwrap();
        assert!(out.masks()[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn propagation_shape_mismatch() {
        let m = MaskSet::unlabeled(vec![mask(4, 4, |_, _| true)]).unwrap();
        assert!(matches!(
            propagate(&m, &EdgeMap::zeros(4, 5), &AffinityParams::default()),
            Err(BgpError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn transition_rows_are_stochastic_with_fallback() {
        let e = edges(6, 6, |y, x| {
            if x == 3 || (y, x) == (1, 1) {
                1.0
            } else {
                0.3 * ((x + y) % 2) as f64
            }
        });
        let t = TransitionMatrix::from_affinity(
            &sparse_affinity(&e, &AffinityParams::default()).unwrap(),
            8.0,
        );
        for i in 0..t.len() {
            let s: f64 = t.row(i).iter().map(|&(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_eq!(t.row(7), &[(7, 1.0)]);
    }

    #[test]
    fn merge_examples() {
        let disjoint =
            MaskSet::unlabeled(vec![mask(4, 4, |y, _| y < 2), mask(4, 4, |y, _| y >= 2)]).unwrap();
        assert_eq!(merge_masks(&disjoint, 0.5), disjoint);

        let twins = MaskSet::unlabeled(vec![mask(4, 4, |y, _| y < 2); 2]).unwrap();
        assert_eq!(merge_masks(&twins, 0.5).len(), 1);

        // A: columns 0-4, B: columns 0-3 → IoU 0.8; C: columns 3-6 overlaps B by one column.
        let a = mask(4, 10, |_, x| x <= 4);
        let b = mask(4, 10, |_, x| x <= 3);
        let c = mask(4, 10, |_, x| (3..=6).contains(&x));
        let bins: Vec<Vec<bool>> = [&a, &b, &c].iter().map(|m| binarize(m)).collect();
        assert!((binary_iou(&bins[0], &bins[1]) - 0.8).abs() < 1e-12);
        assert!((binary_iou(&bins[1], &bins[2]) - 1.0 / 7.0).abs() < 1e-12);
        let set = MaskSet::new(
            vec![a.clone(), b, c.clone()],
            vec![Some(1), Some(2), Some(3)],
        )
        .unwrap();
        let merged = merge_masks(&set, 0.5);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.masks()[0], a);
        assert_eq!(merged.masks()[1], c);
        assert_eq!(merged.labels(), &[Some(1), Some(3)]);
    }

    #[test]
    fn upscale_examples() {
        let e = edges(2, 2, |y, x| (y * 2 + x) as f64 / 4.0);
        let up = upscale_edges(&e, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.grid().get(y, x), e.grid().get(y / 2, x / 2));
            }
        }
        assert_eq!(upscale_edges(&e, 2, 2).unwrap(), e);
        let e3 = edges(3, 3, |y, x| (y * 3 + x) as f64 / 9.0);
        let up = upscale_edges(&e3, 9, 9).unwrap();
        assert_eq!(up.grid().get(8, 5), e3.grid().get(2, 1));
        assert!(matches!(
            upscale_edges(&e3, 2, 9),
            Err(BgpError::DownscaleRequested { .. })
        ));
    }

    #[test]
    fn from_signed_clamps() {
        let g = PixelGrid::new(1, 3, vec![-1.0, 0.25, 1.0]).unwrap();
        assert_eq!(EdgeMap::from_signed(&g).grid().values(), &[0.0, 0.25, 1.0]);
        assert!(EdgeMap::new(g).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(AffinityParams::default().validate().is_ok());
        for bad in [
            AffinityParams {
                beta: 0.5,
                ..Default::default()
            },
            AffinityParams {
                iterations: 0,
                ..Default::default()
            },
            AffinityParams {
                search_radius: 0,
                ..Default::default()
            },
            AffinityParams {
                tau_bgp: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn restriction_drops_unseeded_components() {
        let e = edges(4, 6, |_, x| if x == 2 { 0.6 } else { 0.0 });
        let seeds = MaskSet::unlabeled(vec![mask(4, 6, |y, x| y == 1 && x == 0)]).unwrap();
        let leaked = MaskSet::unlabeled(vec![mask(4, 6, |_, _| true)]).unwrap();
        let cc = connected_components(&e, 0.5);
        let out = restrict_to_seed_components(&leaked, &seeds, &e, &cc).unwrap();
        for y in 0..4 {
            assert_eq!(*out.masks()[0].get(y, 1), 1.0);
            assert_eq!(*out.masks()[0].get(y, 2), 1.0);
            assert_eq!(*out.masks()[0].get(y, 4), 0.0);
        }
    }

    proptest! {
        #[test]
        fn components_partition_and_match_flood_fill(
            bits in prop::collection::vec(prop::bool::weighted(0.35), 48),
        ) {
            let e = edges(6, 8, |y, x| if bits[y * 8 + x] { 1.0 } else { 0.0 });
            let cc = connected_components(&e, 0.5);
            let reference = flood_fill(&e, 0.5);
            prop_assert_eq!(cc.values(), reference.as_slice());
            for (&c, &b) in cc.values().iter().zip(&bits) {
                prop_assert_eq!(c == 0, b);
            }
        }

        #[test]
        fn affinity_is_symmetric(values in prop::collection::vec(0.0f64..1.0, 36)) {
            let e = edges(6, 6, |y, x| values[y * 6 + x]);
            let a = sparse_affinity(&e, &AffinityParams { search_radius: 3, ..Default::default() }).unwrap();
            for i in 0..36 {
                for &(j, v) in a.row(i) {
                    prop_assert_eq!(a.get(j as usize, i), Some(v));
                }
            }
        }

        #[test]
        fn merging_terminates_with_fewer_masks(
            rects in prop::collection::vec((0usize..6, 0usize..6, 1usize..4, 1usize..4), 1..6),
        ) {
            let masks: Vec<_> = rects
                .iter()
                .map(|&(y0, x0, h, w)| mask(8, 8, |y, x| (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x)))
                .collect();
            let set = MaskSet::unlabeled(masks).unwrap();
            let merged = merge_masks(&set, 0.5);
            prop_assert!(merged.len() <= set.len());
            let bins: Vec<Vec<bool>> = merged.masks().iter().map(binarize).collect();
            for a in 0..bins.len() {
                for b in a + 1..bins.len() {
                    prop_assert!(binary_iou(&bins[a], &bins[b]) <= 0.5);
                }
            }
        }
    }
}
