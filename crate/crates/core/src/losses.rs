//! Chamfer alignment losses and the displacement-smoothness diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, nearest_sq_dist, sq_dist, Nearest, PointSet};
use crate::model::DisplacementField;
use crate::scalar::Scalar;

/// Clip threshold used for the noisy-target experiments.
pub const DEFAULT_CLIP: f64 = 0.1;

/// How clipped Chamfer treats each nearest-neighbour term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// `min(d, c)`: a far point contributes at most `c`.
    Cap,
    /// `max(d, c)`: literal floor form; well-matched points contribute `c`
    /// and receive no gradient.
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LossKind {
    Chamfer,
    Clipped { c: f64, mode: ClipMode },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Clipped { c, .. } if !(c > 0.0) => Err(Error::NonPositiveClip(c)),
            _ => Ok(()),
        }
    }

    #[inline]
    fn term(&self, d: f64) -> f64 {
        match *self {
            LossKind::Chamfer => d,
            LossKind::Clipped { c, mode: ClipMode::Cap } => d.min(c),
            LossKind::Clipped { c, mode: ClipMode::Floor } => d.max(c),
        }
    }

    /// Whether the term passes gradient (false where it is clipped to `c`).
    #[inline]
    fn active(&self, d: f64) -> bool {
        match *self {
            LossKind::Chamfer => true,
            LossKind::Clipped { c, mode: ClipMode::Cap } => d < c,
            LossKind::Clipped { c, mode: ClipMode::Floor } => d > c,
        }
    }
}

/// `total == forward_term + backward_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Sum over transformed-source points of their nearest-target term.
    pub forward_term: f64,
    /// Sum over target points of their nearest-transformed-source term.
    pub backward_term: f64,
}

pub(crate) struct Evaluation {
    pub value: LossValue,
    pub forward: Nearest<f64>,
    pub backward: Nearest<f64>,
    pub forward_active: Vec<bool>,
    pub backward_active: Vec<bool>,
}

fn to_f64_set<T: Scalar>(flat: &[T], dim: usize) -> Result<PointSet<f64>> {
    PointSet::new(dim, flat.iter().map(|v| v.as_f64()).collect())
}

/// Shared kernel of the plain and on-tape losses, always in 64-bit.
pub(crate) fn evaluate_flat<T: Scalar>(a: &[T], b: &[T], dim: usize, kind: LossKind) -> Result<Evaluation> {
    kind.validate()?;
    let a = to_f64_set(a, dim)?;
    let b = to_f64_set(b, dim)?;
    evaluate(&a, &b, kind)
}

fn evaluate(a: &PointSet<f64>, b: &PointSet<f64>, kind: LossKind) -> Result<Evaluation> {
    kind.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let forward = nearest_sq_dist(a, b)?;
    let backward = nearest_sq_dist(b, a)?;
    let mut forward_term = 0.0;
    for &d in &forward.sq_dists {
        forward_term += kind.term(d);
    }
    let mut backward_term = 0.0;
    for &d in &backward.sq_dists {
        backward_term += kind.term(d);
    }
    Ok(Evaluation {
        value: LossValue { total: forward_term + backward_term, forward_term, backward_term },
        forward_active: forward.sq_dists.iter().map(|&d| kind.active(d)).collect(),
        backward_active: backward.sq_dists.iter().map(|&d| kind.active(d)).collect(),
        forward,
        backward,
    })
}

/// Loss of the given kind between a transformed source and a target.
pub fn loss(s_prime: &PointSet, g: &PointSet, kind: LossKind) -> Result<LossValue> {
    Ok(evaluate(s_prime, g, kind)?.value)
}

/// Symmetric sum of squared nearest-neighbour distances (no normalization).
pub fn chamfer(s_prime: &PointSet, g: &PointSet) -> Result<LossValue> {
    loss(s_prime, g, LossKind::Chamfer)
}

pub fn clipped_chamfer(s_prime: &PointSet, g: &PointSet, c: f64, mode: ClipMode) -> Result<LossValue> {
    loss(s_prime, g, LossKind::Clipped { c, mode })
}

/// Chamfer divided by the total number of points in both sets.
pub fn chamfer_per_point(s_prime: &PointSet, g: &PointSet) -> Result<f64> {
    Ok(chamfer(s_prime, g)?.total / (s_prime.len() + g.len()) as f64)
}

/// Mean over points of the mean over their `k` nearest neighbours of
/// `||dx_i - dx_j||^2 / ||x_i - x_j||^2`. Coincident neighbours are skipped.
///
/// A first-difference stand-in for the integrated squared Jacobian of the
/// displacement field; zero for rigid translations.
pub fn smoothness_diagnostic(field: &DisplacementField, source: &PointSet, k: usize) -> Result<f64> {
    let n = source.len();
    if field.drifts.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "smoothness_diagnostic",
            detail: format!("{} drifts for {n} points", field.drifts.rows()),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let mut acc = 0.0;
        let mut m = 0usize;
        // k + 1 includes the point itself, which is skipped below.
        for j in knn_indices(source, i, k + 1)? {
            if j == i {
                continue;
            }
            let dx2 = sq_dist(source.point(i), source.point(j));
            if dx2 < 1e-24 {
                continue;
            }
            acc += sq_dist(field.drifts.row(i), field.drifts.row(j)) / dx2;
            m += 1;
            if m == k {
                break;
            }
        }
        if m > 0 {
            total += acc / m as f64;
            counted += 1;
        }
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}
