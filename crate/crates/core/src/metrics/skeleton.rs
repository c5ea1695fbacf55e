//! Zhang–Suen thinning and the centreline Dice score.

use super::{check_shape, f1_score, MetricsError};
use crate::tensor_io::PixelGrid;

/// Neighbours `P2..P9` clockwise from north; outside pixels count as background.
fn neighbours(img: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    let at = |dy: isize, dx: isize| {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        ny >= 0
            && nx >= 0
            && (ny as usize) < h
            && (nx as usize) < w
            && img[ny as usize * w + nx as usize]
    };
    [
        at(-1, 0),
        at(-1, 1),
        at(0, 1),
        at(1, 1),
        at(1, 0),
        at(1, -1),
        at(0, -1),
        at(-1, -1),
    ]
}

/// Iterative two-subpass thinning down to a one-pixel-wide skeleton.
pub fn zhang_suen(img: &PixelGrid<bool>) -> PixelGrid<bool> {
    let (h, w) = (img.height(), img.width());
    let mut cur = img.values().to_vec();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !cur[y * w + x] {
                        continue;
                    }
                    let p = neighbours(&cur, h, w, y, x);
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y * w + x);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                cur[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    PixelGrid::new(h, w, cur).expect("input shape")
}

/// Skeleton of a non-empty map; a map that thins away entirely (a 2×2 block,
/// say) stands in for its own skeleton.
fn skeleton_or_self(img: &PixelGrid<bool>) -> PixelGrid<bool> {
    let skel = zhang_suen(img);
    if skel.values().iter().any(|&v| v) {
        skel
    } else {
        img.clone()
    }
}

fn overlap_ratio(skel: &PixelGrid<bool>, other: &PixelGrid<bool>) -> f64 {
    let total = skel.values().iter().filter(|&&v| v).count();
    let hit = skel
        .values()
        .iter()
        .zip(other.values())
        .filter(|(s, o)| **s && **o)
        .count();
    hit as f64 / total as f64
}

/// `2·Tprec·Tsens / (Tprec + Tsens)` with `Tprec = |S(pred) ∩ gt| / |S(pred)|`
/// and `Tsens = |S(gt) ∩ pred| / |S(gt)|`. Two empty maps score 1, one empty map 0.
pub fn cl_dice(pred: &PixelGrid<bool>, gt: &PixelGrid<bool>) -> Result<f64, MetricsError> {
    check_shape(gt, pred)?;
    let pred_any = pred.values().iter().any(|&v| v);
    let gt_any = gt.values().iter().any(|&v| v);
    match (pred_any, gt_any) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let tprec = overlap_ratio(&skeleton_or_self(pred), gt);
    let tsens = overlap_ratio(&skeleton_or_self(gt), pred);
    Ok(f1_score(tprec, tsens))
}
