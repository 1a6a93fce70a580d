//! Otsu binarization of density fields on a 256-level gray scale.
//!
//! Between-class variance is compared in exact integer arithmetic, so ties
//! (e.g. every threshold inside an empty histogram gap) resolve to the
//! lowest threshold regardless of summation order.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::grid::DensityField;

/// Map a density in `[0, 1]` to its gray level.
#[inline]
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Unnormalized between-class variance at threshold `t` as the exact
/// fraction `(N s0 - S n0)^2 / (n0 n1)`, or `None` when a class is empty.
fn between_class(n0: u64, s0: u64, n: u64, s: u64) -> Option<(u128, u128)> {
    let n1 = n - n0;
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let diff = (n as i128 * s0 as i128 - s as i128 * n0 as i128).unsigned_abs();
    Some((diff * diff, n0 as u128 * n1 as u128))
}

fn cmp_fraction(a: (u128, u128), b: (u128, u128)) -> Ordering {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => {
            let l = a.0 as f64 / a.1 as f64;
            let r = b.0 as f64 / b.1 as f64;
            l.partial_cmp(&r).unwrap_or(Ordering::Equal)
        }
    }
}

/// Threshold `t` maximizing between-class variance, where class 0 holds
/// levels `<= t`. Candidates are `0..=254`.
pub fn otsu_threshold(levels: &[u8]) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &l in levels {
        hist[l as usize] += 1;
    }
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return Err(Error::DegenerateHistogram(levels.len()));
    }
    let n = levels.len() as u64;
    let s: u64 = hist.iter().enumerate().map(|(l, &h)| l as u64 * h).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(u8, (u128, u128))> = None;
    for t in 0..255usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        if let Some(v) = between_class(n0, s0, n, s) {
            if best.map_or(true, |(_, b)| cmp_fraction(v, b) == Ordering::Greater) {
                best = Some((t as u8, v));
            }
        }
    }
    Ok(best.expect("two occupied levels give a non-empty split").0)
}

/// Binarize the entries selected by `mask`; other entries are passed
/// through untouched, the roadway stays solid.
pub fn otsu_binarize_masked(field: &DensityField, mask: &[bool]) -> Result<DensityField> {
    let levels: Vec<u8> = field
        .values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| quantize(v))
        .collect();
    let t = otsu_threshold(&levels)?;
    let mut out = field.clone();
    for (v, &m) in out.values.iter_mut().zip(mask) {
        if m {
            *v = if quantize(*v) > t { 1.0 } else { 0.0 };
        }
    }
    out.fix_roadway();
    Ok(out)
}

/// Binarize every non-roadway element.
pub fn otsu_binarize(field: &DensityField) -> Result<DensityField> {
    let mask: Vec<bool> = (0..field.values.len()).map(|i| !field.grid.is_roadway(i)).collect();
    otsu_binarize_masked(field, &mask)
}
