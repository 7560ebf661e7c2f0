//! Point-set containers and the distance primitives every other module builds on.

pub mod io;
mod kdtree;

pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::synth::SynthesisMeta;

/// Reference sets larger than this are searched with a k-d tree.
pub const BRUTE_FORCE_LIMIT: usize = 512;

/// An ordered list of 2-D or 3-D points stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T = f64> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> PointSet<T> {
    /// Builds a set from flat row-major coordinates.
    pub fn new(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDim(dim));
        }
        if coords.is_empty() {
            return Err(Error::EmptySet);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Format(format!("{} coordinates do not split into {dim}-vectors", coords.len())));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate(pos / dim));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<const D: usize>(points: &[[T; D]]) -> Result<Self> {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false for a constructed set; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.len(), self.dim, self.coords.clone()).expect("consistent shape")
    }

    pub fn from_matrix(m: &Matrix<T>) -> Result<Self> {
        Self::new(m.cols(), m.as_slice().to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> PointSet<U> {
        PointSet { dim: self.dim, coords: self.coords.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect() }
    }

    pub fn centroid(&self) -> Vec<T> {
        let mut c = vec![T::zero(); self.dim];
        for p in self.points() {
            for (acc, &v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = T::from_usize(self.len()).unwrap();
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    pub fn max_norm(&self) -> T {
        self.points().map(|p| sq_norm(p).sqrt()).fold(T::zero(), T::max)
    }

    /// Copy with `offset` added to every point.
    pub fn translated(&self, offset: &[T]) -> Self {
        assert_eq!(offset.len(), self.dim);
        let mut coords = self.coords.clone();
        for p in coords.chunks_exact_mut(self.dim) {
            for (v, &o) in p.iter_mut().zip(offset) {
                *v += o;
            }
        }
        Self { dim: self.dim, coords }
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            coords.extend_from_slice(self.point(i));
        }
        Self::new(self.dim, coords)
    }

    /// Appends the points of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch(self.dim, other.dim));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Self { dim: self.dim, coords })
    }
}

#[inline]
fn sq_norm<T: Scalar>(p: &[T]) -> T {
    p.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Squared Euclidean distance, accumulated coordinate by coordinate.
#[inline]
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// A source/target pair, optionally with the uncorrupted target and the
/// parameters that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePair {
    pub source: PointSet,
    pub target: PointSet,
    /// Target before noise was applied, when known. Evaluation measures
    /// alignment against this set.
    pub clean_target: Option<PointSet>,
    pub meta: Option<SynthesisMeta>,
}

impl ShapePair {
    pub fn new(source: PointSet, target: PointSet) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimMismatch(source.dim(), target.dim()));
        }
        Ok(Self { source, target, clean_target: None, meta: None })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// The set alignment quality is measured against.
    pub fn reference_target(&self) -> &PointSet {
        self.clean_target.as_ref().unwrap_or(&self.target)
    }
}

/// Centers the set on its centroid and scales it to unit maximum norm.
pub fn normalize<T: Scalar>(ps: &PointSet<T>) -> Result<PointSet<T>> {
    let c = ps.centroid();
    let neg: Vec<T> = c.iter().map(|&v| -v).collect();
    let centered = ps.translated(&neg);
    let scale = centered.max_norm();
    if !(scale > T::zero()) {
        return Err(Error::DegenerateShape);
    }
    let coords = centered.coords.iter().map(|&v| v / scale).collect();
    Ok(PointSet { dim: ps.dim, coords })
}

/// Matrix of `||a_i - b_j||^2`.
pub fn pairwise_sq_dists<T: Scalar>(a: &PointSet<T>, b: &PointSet<T>) -> Result<Matrix<T>> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let mut out = Matrix::zeros(a.len(), b.len());
    for (i, p) in a.points().enumerate() {
        for (slot, q) in out.row_mut(i).iter_mut().zip(b.points()) {
            *slot = sq_dist(p, q);
        }
    }
    Ok(out)
}

/// Nearest reference point for every query point.
#[derive(Clone, Debug, PartialEq)]
pub struct Nearest<T> {
    pub sq_dists: Vec<T>,
    /// Index of the nearest reference point; ties go to the lower index.
    pub indices: Vec<usize>,
}

/// For each query point, the squared distance to (and index of) its nearest
/// reference point.
pub fn nearest_sq_dist<T: Scalar>(query: &PointSet<T>, reference: &PointSet<T>) -> Result<Nearest<T>> {
    if query.dim() != reference.dim() {
        return Err(Error::DimMismatch(query.dim(), reference.dim()));
    }
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if reference.len() > BRUTE_FORCE_LIMIT {
        let tree = KdTree::build(reference);
        let (sq_dists, indices) = query.points().map(|q| tree.nearest(q)).map(|(i, d)| (d, i)).unzip();
        return Ok(Nearest { sq_dists, indices });
    }
    Ok(nearest_brute_force(query, reference))
}

pub(crate) fn nearest_brute_force<T: Scalar>(query: &PointSet<T>, reference: &PointSet<T>) -> Nearest<T> {
    let mut sq_dists = Vec::with_capacity(query.len());
    let mut indices = Vec::with_capacity(query.len());
    for q in query.points() {
        let mut best = T::infinity();
        let mut arg = 0;
        for (j, r) in reference.points().enumerate() {
            let d = sq_dist(q, r);
            if d < best {
                best = d;
                arg = j;
            }
        }
        sq_dists.push(best);
        indices.push(arg);
    }
    Nearest { sq_dists, indices }
}

/// The `k` points closest to `ps[anchor]` (anchor included), nearest first,
/// ties broken by lower index.
pub fn knn_indices<T: Scalar>(ps: &PointSet<T>, anchor: usize, k: usize) -> Result<Vec<usize>> {
    let n = ps.len();
    if anchor >= n {
        return Err(Error::IndexOutOfRange { index: anchor, len: n });
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let a = ps.point(anchor);
    let mut order: Vec<(T, usize)> = ps.points().enumerate().map(|(i, p)| (sq_dist(a, p), i)).collect();
    order.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
}
