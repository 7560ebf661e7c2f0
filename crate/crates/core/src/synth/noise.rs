//! Target corruptions: Gaussian displacement, point outliers, data incompleteness.

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, PointSet};
use crate::rng::Stream;

/// Displaces every coordinate by iid `N(0, level^2)`.
pub fn add_gd_noise(ps: &PointSet, level: f64, seed: u64) -> Result<PointSet> {
    if !(level >= 0.0) {
        return Err(Error::LevelOutOfRange(level));
    }
    if level == 0.0 {
        return Ok(ps.clone());
    }
    let mut rng = Stream::new(seed);
    let coords = ps.as_flat().iter().map(|&v| v + level * rng.normal()).collect();
    PointSet::new(ps.dim(), coords)
}

/// Number of outliers making up `level` of the corrupted set.
pub fn outlier_count(n: usize, level: f64) -> usize {
    (level * n as f64 / (1.0 - level)).round() as usize
}

/// Appends unit-variance Gaussian outliers so they form `level` of the result.
pub fn add_po_noise(ps: &PointSet, level: f64, seed: u64) -> Result<PointSet> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::LevelOutOfRange(level));
    }
    let m = outlier_count(ps.len(), level);
    if m == 0 {
        return Ok(ps.clone());
    }
    let mut rng = Stream::new(seed);
    let outliers: Vec<f64> = (0..m * ps.dim()).map(|_| rng.normal()).collect();
    ps.concat(&PointSet::new(ps.dim(), outliers)?)
}

/// Removes the `round(level * n)` points nearest a uniformly drawn anchor
/// (anchor included). Kept points retain their order.
pub fn add_di_noise(ps: &PointSet, level: f64, seed: u64) -> Result<PointSet> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::LevelOutOfRange(level));
    }
    let n = ps.len();
    let remove = (level * n as f64).round() as usize;
    if remove == 0 {
        return Ok(ps.clone());
    }
    if n - remove < 4 {
        return Err(Error::TooFewPointsLeft { left: n - remove });
    }
    let anchor = Stream::new(seed).below(n);
    let mut dropped = vec![false; n];
    for i in knn_indices(ps, anchor, remove)? {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    ps.select(&keep)
}
