//! Losses used to distil ternary edge maps into a decoder.

use super::{check_shape, MetricsError};
use crate::abdiv::UNCERTAIN;
use crate::tensor_io::PixelGrid;

/// `1 − 2ΣW·E·Ê / (ΣW·E² + ΣW·Ê²)` with `W = [E ≠ −1]`. A target without
/// supervised pixels, or one where both sums vanish, gives 0.
pub fn dice_loss(target: &PixelGrid<i8>, pred: &PixelGrid<f64>) -> Result<f64, MetricsError> {
    check_shape(target, pred)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&e, &p) in target.values().iter().zip(pred.values()) {
        if e == UNCERTAIN {
            continue;
        }
        let e = f64::from(e);
        num += e * p;
        den += e * e + p * p;
    }
    Ok(if den > 0.0 {
        1.0 - 2.0 * num / den
    } else {
        0.0
    })
}

/// Mean squared error between an image and its reconstruction.
pub fn recon_mse(image: &[f64], reconstruction: &[f64]) -> Result<f64, MetricsError> {
    if image.len() != reconstruction.len() {
        return Err(MetricsError::LengthMismatch(
            image.len(),
            reconstruction.len(),
        ));
    }
    if image.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = image
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / image.len() as f64)
}
