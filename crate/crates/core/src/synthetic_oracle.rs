//! Exponential-family attention with closed-form statistics.
//!
//! Rows are `p_γ(j | i) ∝ exp(γ s_ij)` for a fixed similarity field `s` and a
//! decreasing inverse-temperature schedule `γ`. Entropy, its derivative and
//! the Fisher information are available exactly, which makes these stacks a
//! ground truth for timestep selection and boundary scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::iep::first_argmax;
use crate::tensor_io::{AttentionBlock, AttentionStack, FormatError, TimestepAttention};

/// Constant of the cubic remainder bound `C·|Δγ|³·S³`.
pub const CUBIC_BOUND_CONSTANT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("{values} gamma values for {timesteps} timesteps")]
    LengthMismatch { values: usize, timesteps: usize },
    #[error("gamma must strictly decrease: γ[{index}] = {next} after {prev}")]
    NotDecreasing { index: usize, prev: f64, next: f64 },
    #[error("gamma value {0} outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("timesteps must strictly increase ({prev} then {next})")]
    NonIncreasingTimesteps { prev: u32, next: u32 },
    #[error("similarity field needs {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("similarity values must be finite")]
    NonFinite,
    #[error("row {0} has a single distinct similarity value")]
    DegenerateRow(usize),
    #[error("attention stacks need a square grid, got {height}×{width}")]
    NotSquare { height: usize, width: usize },
    #[error("split column {split} must lie strictly inside a width of {width}")]
    BadSplit { split: usize, width: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Strictly decreasing inverse temperatures aligned with a timestep grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSchedule {
    values: Vec<f64>,
    timesteps: Vec<u32>,
}

impl GammaSchedule {
    pub fn new(values: Vec<f64>, timesteps: Vec<u32>) -> Result<Self, OracleError> {
        if values.is_empty() {
            return Err(OracleError::EmptySchedule);
        }
        if values.len() != timesteps.len() {
            return Err(OracleError::LengthMismatch {
                values: values.len(),
                timesteps: timesteps.len(),
            });
        }
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OracleError::GammaOutOfRange(v));
        }
        for (index, pair) in values.windows(2).enumerate() {
            if !(pair[1] < pair[0]) {
                return Err(OracleError::NotDecreasing {
                    index: index + 1,
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        for pair in timesteps.windows(2) {
            if pair[1] <= pair[0] {
                return Err(OracleError::NonIncreasingTimesteps {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        Ok(Self { values, timesteps })
    }

    /// `γ(u) = 1 − (3u² − 2u³)` with `u` the normalized position on the grid.
    pub fn smoothstep(timesteps: Vec<u32>) -> Result<Self, OracleError> {
        let values = normalized_positions(&timesteps)
            .into_iter()
            .map(|u| 1.0 - u * u * (3.0 - 2.0 * u))
            .collect();
        Self::new(values, timesteps)
    }

    /// Logistic drop from 1 to 0 centred at `center ∈ (0, 1)` with slope
    /// `steepness`, rescaled so the endpoints are exactly 1 and 0.
    pub fn sigmoid(timesteps: Vec<u32>, center: f64, steepness: f64) -> Result<Self, OracleError> {
        let logistic = |u: f64| 1.0 / (1.0 + (-steepness * (center - u)).exp());
        let (hi, lo) = (logistic(0.0), logistic(1.0));
        let values = normalized_positions(&timesteps)
            .into_iter()
            .map(|u| ((logistic(u) - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect();
        Self::new(values, timesteps)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timesteps(&self) -> &[u32] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `γ_n − γ_{n−1}` for `n ≥ 1` (all negative).
    pub fn deltas(&self) -> Vec<f64> {
        self.values.windows(2).map(|p| p[1] - p[0]).collect()
    }

    pub fn max_abs_delta(&self) -> f64 {
        self.deltas().iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

fn normalized_positions(timesteps: &[u32]) -> Vec<f64> {
    match (timesteps.first(), timesteps.last()) {
        (Some(&first), Some(&last)) if last > first => {
            let span = f64::from(last - first);
            timesteps
                .iter()
                .map(|&t| f64::from(t - first) / span)
                .collect()
        }
        _ => vec![0.0; timesteps.len()],
    }
}

/// Time-invariant similarity logits between the pixels of an `H × W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    height: usize,
    width: usize,
    values: Vec<f64>,
    bound: f64,
}

impl SimilarityField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, OracleError> {
        let n = height * width;
        if n == 0 || values.len() != n * n {
            return Err(OracleError::ShapeMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite);
        }
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            height,
            width,
            values,
            bound,
        })
    }

    /// Independent uniform logits in `[−bound, bound]` on a square grid.
    pub fn random(width: usize, bound: f64, seed: u64) -> Self {
        let n = width * width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(width, width, values).expect("n² finite values")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// `S = max |s_ij|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.pixels();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.pixels())
    }

    /// Gap between the largest and second largest distinct logit of row `i`.
    pub fn top2_gap(&self, i: usize) -> Option<f64> {
        let row = self.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let second = row
            .iter()
            .copied()
            .filter(|&v| v < max)
            .fold(f64::NEG_INFINITY, f64::max);
        second.is_finite().then_some(max - second)
    }

    fn check_rows(&self) -> Result<(), OracleError> {
        for (i, row) in self.rows().enumerate() {
            if row.iter().all(|&v| v == row[0]) {
                return Err(OracleError::DegenerateRow(i));
            }
        }
        Ok(())
    }
}

/// `s_ij = contrast` when pixels `i` and `j` lie on the same side of
/// `split_col`, else 0.
pub fn synth_two_instance_field(
    height: usize,
    width: usize,
    split_col: usize,
    contrast: f64,
) -> Result<SimilarityField, OracleError> {
    if split_col == 0 || split_col >= width {
        return Err(OracleError::BadSplit {
            split: split_col,
            width,
        });
    }
    let n = height * width;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let left = i % width < split_col;
        for j in 0..n {
            if (j % width < split_col) == left {
                values[i * n + j] = contrast;
            }
        }
    }
    SimilarityField::new(height, width, values)
}

/// Natural-log softmax of `γ · s`.
pub fn log_softmax(s_row: &[f64], gamma: f64) -> Vec<f64> {
    let max = s_row
        .iter()
        .map(|&s| gamma * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = max
        + s_row
            .iter()
            .map(|&s| (gamma * s - max).exp())
            .sum::<f64>()
            .ln();
    s_row.iter().map(|&s| gamma * s - log_z).collect()
}

pub fn softmax(s_row: &[f64], gamma: f64) -> Vec<f64> {
    log_softmax(s_row, gamma)
        .into_iter()
        .map(f64::exp)
        .collect()
}

fn log_partition(s_row: &[f64], gamma: f64) -> f64 {
    let max = s_row
        .iter()
        .map(|&s| gamma * s)
        .fold(f64::NEG_INFINITY, f64::max);
    max + s_row
        .iter()
        .map(|&s| (gamma * s - max).exp())
        .sum::<f64>()
        .ln()
}

/// Mean and variance of `s` under `p_γ`.
fn moments(s_row: &[f64], gamma: f64) -> (f64, f64) {
    let p = softmax(s_row, gamma);
    let mean: f64 = p.iter().zip(s_row).map(|(p, s)| p * s).sum();
    let var: f64 = p
        .iter()
        .zip(s_row)
        .map(|(p, s)| p * (s - mean) * (s - mean))
        .sum();
    (mean, var)
}

/// `H = log Z − γ·E_p[s]`.
pub fn row_entropy(s_row: &[f64], gamma: f64) -> f64 {
    let (mean, _) = moments(s_row, gamma);
    log_partition(s_row, gamma) - gamma * mean
}

/// `∂H/∂γ = −γ·Var_p[s]`.
pub fn entropy_derivative(s_row: &[f64], gamma: f64) -> f64 {
    -gamma * fisher_info(s_row, gamma)
}

/// `Var_p[s]`, the Fisher information of the row with respect to `γ`.
pub fn fisher_info(s_row: &[f64], gamma: f64) -> f64 {
    moments(s_row, gamma).1.max(0.0)
}

/// Fisher information averaged over the rows of the field.
pub fn mean_fisher(s: &SimilarityField, gamma: f64) -> f64 {
    s.rows().map(|row| fisher_info(row, gamma)).sum::<f64>() / s.pixels() as f64
}

/// One single-block map per timestep holding the row softmaxes of `γ_t · s`.
pub fn synth_attention(
    s: &SimilarityField,
    gamma: &GammaSchedule,
) -> Result<AttentionStack, OracleError> {
    if s.height != s.width {
        return Err(OracleError::NotSquare {
            height: s.height,
            width: s.width,
        });
    }
    s.check_rows()?;
    let steps = gamma
        .values
        .iter()
        .zip(&gamma.timesteps)
        .map(|(&g, &timestep)| {
            let map: Vec<f32> = s
                .rows()
                .flat_map(|row| softmax(row, g))
                .map(|v| v as f32)
                .collect();
            Ok(TimestepAttention {
                timestep,
                blocks: vec![AttentionBlock::new(s.width as u32, map)?],
            })
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    Ok(AttentionStack::new(steps)?)
}

/// Second-order comparison for one consecutive pair of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub timestep: u32,
    pub delta_gamma: f64,
    /// Mean over rows of `KL(p_{n−1} ‖ p_n)`, computed in closed form.
    pub measured_kl: f64,
    /// `½ (Δγ)² · Ī(γ_n)`.
    pub predicted_kl: f64,
    pub residual: f64,
    /// `measured / predicted`, absent when the prediction is zero.
    pub ratio: Option<f64>,
    /// `C·|Δγ|³·S³`.
    pub cubic_bound: f64,
}

impl StepReport {
    pub fn within_bound(&self) -> bool {
        self.residual.abs() <= self.cubic_bound
    }
}

fn row_kl_exact(s_row: &[f64], from: f64, to: f64) -> f64 {
    let lp = log_softmax(s_row, from);
    let lq = log_softmax(s_row, to);
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

pub fn kl_second_order_check(s: &SimilarityField, gamma: &GammaSchedule) -> Vec<StepReport> {
    let bound = s.bound();
    gamma
        .values
        .windows(2)
        .zip(&gamma.timesteps[1..])
        .map(|(pair, &timestep)| {
            let (prev, curr) = (pair[0], pair[1]);
            let delta_gamma = curr - prev;
            let measured_kl = s
                .rows()
                .map(|row| row_kl_exact(row, prev, curr))
                .sum::<f64>()
                / s.pixels() as f64;
            let predicted_kl = 0.5 * delta_gamma * delta_gamma * mean_fisher(s, curr);
            StepReport {
                timestep,
                delta_gamma,
                measured_kl,
                predicted_kl,
                residual: measured_kl - predicted_kl,
                ratio: (predicted_kl > 0.0).then(|| measured_kl / predicted_kl),
                cubic_bound: CUBIC_BOUND_CONSTANT * delta_gamma.abs().powi(3) * bound.powi(3),
            }
        })
        .collect()
}

/// Timestep whose predicted second-order KL is largest (first on ties).
pub fn predicted_peak(report: &[StepReport]) -> Option<u32> {
    first_argmax(report.iter().map(|r| r.predicted_kl)).map(|i| report[i].timestep)
}

/// Timestep whose measured KL is largest (first on ties).
pub fn measured_peak(report: &[StepReport]) -> Option<u32> {
    first_argmax(report.iter().map(|r| r.measured_kl)).map(|i| report[i].timestep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iep::timestep_grid;
    use proptest::prelude::*;

    fn row_field(row: &[f64]) -> SimilarityField {
        // a 1×n grid whose every row equals `row`
        let n = row.len();
        SimilarityField::new(1, n, row.repeat(n)).unwrap()
    }

    #[test]
    fn schedule_validation() {
        let ts = vec![0, 100, 200];
        assert!(GammaSchedule::new(vec![1.0, 0.5, 0.0], ts.clone()).is_ok());
        assert!(matches!(
            GammaSchedule::new(vec![1.0, 1.0, 0.0], ts.clone()),
            Err(OracleError::NotDecreasing { index: 1, .. })
        ));
        assert!(matches!(
            GammaSchedule::new(vec![1.5, 0.5, 0.0], ts.clone()),
            Err(OracleError::GammaOutOfRange(_))
        ));
        assert!(matches!(
            GammaSchedule::new(vec![1.0, 0.5], ts.clone()),
            Err(OracleError::LengthMismatch { .. })
        ));
        assert!(matches!(
            GammaSchedule::new(vec![1.0, 0.5, 0.0], vec![0, 100, 100]),
            Err(OracleError::NonIncreasingTimesteps { .. })
        ));
        assert!(matches!(
            GammaSchedule::new(vec![], vec![]),
            Err(OracleError::EmptySchedule)
        ));
    }

    #[test]
    fn smoothstep_fixture() {
        let g = GammaSchedule::smoothstep(timestep_grid(100, 1000)).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.values()[0], 1.0);
        assert_eq!(g.values()[10], 0.0);
        assert!((g.values()[5] - 0.5).abs() < 1e-12);
        let sig = GammaSchedule::sigmoid(timestep_grid(10, 1000), 0.5, 6.0).unwrap();
        assert_eq!(sig.values()[0], 1.0);
        assert!(sig.values()[100].abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 1.0], 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.2689).abs() < 1e-4 && (p[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn zero_gamma_is_uniform() {
        let s = SimilarityField::random(3, 2.0, 7);
        let g = GammaSchedule::new(vec![0.0], vec![0]).unwrap();
        let stack = synth_attention(&s, &g).unwrap();
        for &v in stack.steps()[0].blocks[0].map() {
            assert!((f64::from(v) - 1.0 / 9.0).abs() < 1e-7);
        }
    }

    #[test]
    fn large_gamma_concentrates() {
        let row = [0.0, 0.3, 1.0, 0.2];
        let p = softmax(&row, 50.0);
        assert!(p[2] > 1.0 - 1e-9);
    }

    #[test]
    fn entropy_examples() {
        let row = [0.3, -1.2, 0.8, 2.0, 0.1];
        assert!((row_entropy(&row, 0.0) - 5f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_derivative(&row, 0.0), 0.0);

        let p = std::f64::consts::E / (1.0 + std::f64::consts::E);
        let d = entropy_derivative(&[0.0, 1.0], 1.0);
        assert!((d + p * (1.0 - p)).abs() < 1e-12);
        assert!((d + 0.1966).abs() < 1e-4);

        // direct −Σ p ln p
        let probs = softmax(&row, 0.7);
        let direct: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((row_entropy(&row, 0.7) - direct).abs() < 1e-12);
    }

    #[test]
    fn fisher_examples() {
        assert!(fisher_info(&[0.5; 4], 0.8) < 1e-30);
        assert!((fisher_info(&[0.0, 1.0], 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_square_checks() {
        let flat = synth_two_instance_field(4, 4, 2, 0.0).unwrap();
        let g = GammaSchedule::smoothstep(vec![0, 100]).unwrap();
        assert!(matches!(
            synth_attention(&flat, &g),
            Err(OracleError::DegenerateRow(0))
        ));
        let wide = synth_two_instance_field(2, 4, 2, 1.0).unwrap();
        assert!(matches!(
            synth_attention(&wide, &g),
            Err(OracleError::NotSquare { .. })
        ));
        assert!(matches!(
            synth_two_instance_field(4, 4, 0, 1.0),
            Err(OracleError::BadSplit { .. })
        ));
        assert!(matches!(
            synth_two_instance_field(4, 4, 4, 1.0),
            Err(OracleError::BadSplit { .. })
        ));
    }

    #[test]
    fn two_instance_field_is_block_constant() {
        let s = synth_two_instance_field(4, 4, 2, 3.0).unwrap();
        assert_eq!(s.bound(), 3.0);
        assert_eq!(s.row(0), s.row(5));
        assert_eq!(s.row(2), s.row(15));
        assert_eq!(s.row(0)[1], 3.0);
        assert_eq!(s.row(0)[2], 0.0);
        assert_eq!(s.top2_gap(0), Some(3.0));
    }

    #[test]
    fn zero_step_has_zero_kl() {
        let s = SimilarityField::random(2, 1.0, 3);
        // equal consecutive gammas cannot come from a valid schedule, so build the pair by hand
        let kl = row_kl_exact(s.row(0), 0.4, 0.4);
        assert_eq!(kl, 0.0);
        let g = GammaSchedule::new(vec![0.5, 0.5 - 1e-300], vec![0, 1]);
        // the difference underflows to an equal value and is rejected
        assert!(g.is_err());
    }

    #[test]
    fn second_order_report() {
        let s = SimilarityField::random(3, 1.5, 11);
        let g = GammaSchedule::smoothstep(timestep_grid(10, 1000)).unwrap();
        let report = kl_second_order_check(&s, &g);
        assert_eq!(report.len(), 100);
        for r in &report {
            assert!(r.within_bound(), "{r:?}");
            assert!(r.measured_kl >= 0.0);
        }
        let peak = predicted_peak(&report).unwrap();
        assert!(peak > 100 && peak < 900);
        // ends of the schedule change little
        let max = report.iter().map(|r| r.measured_kl).fold(0.0, f64::max);
        assert!(report[0].measured_kl <= 0.1 * max);
        assert!(report[99].measured_kl <= 0.1 * max);
    }

    #[test]
    fn entropy_falls_with_gamma() {
        let s = SimilarityField::random(3, 2.0, 5);
        for row in s.rows() {
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let h = row_entropy(row, k as f64 / 100.0);
                assert!(h <= prev + 1e-12);
                prev = h;
            }
        }
    }

    #[test]
    fn random_field_is_seeded() {
        assert_eq!(
            SimilarityField::random(3, 1.0, 9),
            SimilarityField::random(3, 1.0, 9)
        );
        assert_ne!(
            SimilarityField::random(3, 1.0, 9),
            SimilarityField::random(3, 1.0, 10)
        );
        assert!(SimilarityField::random(3, 1.0, 9).bound() <= 1.0);
    }

    #[test]
    fn row_field_helper() {
        let f = row_field(&[0.0, 1.0]);
        assert!((mean_fisher(&f, 1.0) - fisher_info(&[0.0, 1.0], 1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn derivative_matches_central_difference(
            row in prop::collection::vec(-2.0f64..2.0, 2..32),
            gamma in 0.0f64..1.0,
        ) {
            let h = 1e-5;
            let fd = (row_entropy(&row, gamma + h) - row_entropy(&row, gamma - h)) / (2.0 * h);
            prop_assert!((fd - entropy_derivative(&row, gamma)).abs() < 1e-6);
        }

        #[test]
        fn fisher_bounded_by_s_squared(
            row in prop::collection::vec(-3.0f64..3.0, 2..32),
            gamma in 0.0f64..1.0,
        ) {
            let bound = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let f = fisher_info(&row, gamma);
            prop_assert!(f >= 0.0 && f <= bound * bound + 1e-12);
        }
    }
}
