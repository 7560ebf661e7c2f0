//! Thin-plate-spline warps used to synthesize non-rigid deformations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, PointSet};
use crate::rng::Stream;

/// Diagonal ridge added to the 3-D kernel block.
pub const RIDGE_3D: f64 = 1e-8;

/// Control points per axis unless configured otherwise.
pub const DEFAULT_GRID: usize = 3;

#[derive(Clone, Debug)]
pub struct TpsWarp {
    pub dim: usize,
    pub control_src: PointSet,
    pub control_dst: PointSet,
    /// One row of radial-basis weights per control point.
    pub kernel_coeffs: DMatrix<f64>,
    /// `(dim + 1) x dim`: constant row then the linear block.
    pub affine_coeffs: DMatrix<f64>,
}

/// Radial basis: `r^2 log r` in 2-D, `-r` in 3-D (evaluated from `r^2`).
fn kernel(dim: usize, r2: f64) -> f64 {
    if dim == 2 {
        if r2 == 0.0 {
            0.0
        } else {
            0.5 * r2 * r2.ln()
        }
    } else {
        -r2.sqrt()
    }
}

/// Regular grid of `per_axis^dim` points over `[-1, 1]^dim`, last axis fastest.
pub fn control_grid(dim: usize, per_axis: usize) -> PointSet {
    assert!(per_axis >= 2);
    let step = 2.0 / (per_axis - 1) as f64;
    let total = per_axis.pow(dim as u32);
    let mut coords = Vec::with_capacity(total * dim);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = vec![0.0; dim];
        for axis in (0..dim).rev() {
            p[axis] = -1.0 + step * (rem % per_axis) as f64;
            rem /= per_axis;
        }
        coords.extend(p);
    }
    PointSet::new(dim, coords).expect("grid is valid")
}

/// Solves for the spline mapping every `control_src[k]` onto `control_dst[k]`.
pub fn fit_tps(control_src: &PointSet, control_dst: &PointSet) -> Result<TpsWarp> {
    let dim = control_src.dim();
    if control_dst.dim() != dim {
        return Err(Error::DimMismatch(dim, control_dst.dim()));
    }
    let k = control_src.len();
    if control_dst.len() != k {
        return Err(Error::Config(format!("{k} source controls but {} destinations", control_dst.len())));
    }
    if k < dim + 1 {
        return Err(Error::SingularSystem(format!("{k} control points cannot span {dim}-D")));
    }
    let poly = DMatrix::from_fn(k, dim + 1, |i, j| if j == 0 { 1.0 } else { control_src.point(i)[j - 1] });
    let sv = poly.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::SingularSystem("control points are collinear/coplanar".into()));
    }

    let size = k + dim + 1;
    let ridge = if dim == 3 { RIDGE_3D } else { 0.0 };
    let mut system = DMatrix::zeros(size, size);
    for i in 0..k {
        for j in 0..k {
            system[(i, j)] = kernel(dim, sq_dist(control_src.point(i), control_src.point(j)));
        }
        system[(i, i)] += ridge;
        for j in 0..=dim {
            system[(i, k + j)] = poly[(i, j)];
            system[(k + j, i)] = poly[(i, j)];
        }
    }
    let mut rhs = DMatrix::zeros(size, dim);
    for i in 0..k {
        for d in 0..dim {
            rhs[(i, d)] = control_dst.point(i)[d];
        }
    }
    let sol = system
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::SingularSystem("TPS system has no unique solution".into()))?;
    Ok(TpsWarp {
        dim,
        control_src: control_src.clone(),
        control_dst: control_dst.clone(),
        kernel_coeffs: sol.rows(0, k).into_owned(),
        affine_coeffs: sol.rows(k, dim + 1).into_owned(),
    })
}

impl TpsWarp {
    pub fn warp_point(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let mut out: Vec<f64> = (0..dim)
            .map(|d| {
                let mut v = self.affine_coeffs[(0, d)];
                for (j, &xj) in x.iter().enumerate() {
                    v += self.affine_coeffs[(j + 1, d)] * xj;
                }
                v
            })
            .collect();
        for (i, c) in self.control_src.points().enumerate() {
            let u = kernel(dim, sq_dist(x, c));
            for (d, o) in out.iter_mut().enumerate() {
                *o += self.kernel_coeffs[(i, d)] * u;
            }
        }
        out
    }

    pub fn apply(&self, ps: &PointSet) -> Result<PointSet> {
        if ps.dim() != self.dim {
            return Err(Error::DimMismatch(ps.dim(), self.dim));
        }
        let coords = ps.points().flat_map(|p| self.warp_point(p)).collect();
        PointSet::new(self.dim, coords)
    }
}

/// Random warp whose controls are shifted by iid `N(0, (2 level)^2)` per coordinate.
pub fn random_warp(dim: usize, level: f64, seed: u64, per_axis: usize) -> Result<TpsWarp> {
    if !(level >= 0.0) {
        return Err(Error::Config(format!("deformation level must be non-negative, got {level}")));
    }
    let src = control_grid(dim, per_axis);
    let mut rng = Stream::new(seed);
    let std = 2.0 * level;
    let dst: Vec<f64> = src.as_flat().iter().map(|&v| v + std * rng.normal()).collect();
    fit_tps(&src, &PointSet::new(dim, dst)?)
}

/// TPS deformation at `level` over the default control grid.
pub fn deform(ps: &PointSet, level: f64, seed: u64) -> Result<PointSet> {
    deform_with_grid(ps, level, seed, DEFAULT_GRID)
}

pub fn deform_with_grid(ps: &PointSet, level: f64, seed: u64, per_axis: usize) -> Result<PointSet> {
    random_warp(ps.dim(), level, seed, per_axis)?.apply(ps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes(dim: usize, n: usize, seed: u64) -> PointSet {
        let mut s = Stream::new(seed);
        PointSet::new(dim, (0..n * dim).map(|_| s.uniform_in(-1.5, 1.5)).collect()).unwrap()
    }

    fn assert_close(a: &PointSet, b: &PointSet, tol: f64) {
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn grid_layout() {
        let g = control_grid(2, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(0), &[-1.0, -1.0]);
        assert_eq!(g.point(1), &[-1.0, 0.0]);
        assert_eq!(g.point(8), &[1.0, 1.0]);
        assert_eq!(control_grid(3, 3).len(), 27);
    }

    #[test]
    fn identity_controls_give_identity_warp() {
        for dim in [2, 3] {
            let g = control_grid(dim, 3);
            let w = fit_tps(&g, &g).unwrap();
            assert!(w.kernel_coeffs.iter().all(|v| v.abs() < 1e-9));
            let p = probes(dim, 50, 1);
            assert_close(&w.apply(&p).unwrap(), &p, 1e-9);
        }
    }

    #[test]
    fn translation_is_reproduced() {
        for dim in [2, 3] {
            let g = control_grid(dim, 3);
            let t: Vec<f64> = (0..dim).map(|d| 0.3 - 0.2 * d as f64).collect();
            let w = fit_tps(&g, &g.translated(&t)).unwrap();
            let p = probes(dim, 100, 2);
            assert_close(&w.apply(&p).unwrap(), &p.translated(&t), 1e-6);
        }
    }

    #[test]
    fn affine_maps_are_reproduced() {
        let mut s = Stream::new(5);
        for dim in [2, 3] {
            let a: Vec<f64> = (0..dim * dim).map(|_| s.uniform_in(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| s.uniform_in(-1.0, 1.0)).collect();
            let map = |p: &[f64]| -> Vec<f64> {
                (0..dim).map(|r| b[r] + (0..dim).map(|c| a[r * dim + c] * p[c]).sum::<f64>()).collect()
            };
            let g = control_grid(dim, 3);
            let dst = PointSet::new(dim, g.points().flat_map(map).collect()).unwrap();
            let w = fit_tps(&g, &dst).unwrap();
            let p = probes(dim, 100, 6);
            let expect = PointSet::new(dim, p.points().flat_map(map).collect()).unwrap();
            assert_close(&w.apply(&p).unwrap(), &expect, 1e-6);
        }
    }

    #[test]
    fn interpolates_random_perturbation() {
        for dim in [2, 3] {
            let w = random_warp(dim, 0.5, 17, 3).unwrap();
            let hit = w.apply(&w.control_src).unwrap();
            assert_close(&hit, &w.control_dst, 1e-6);
        }
    }

    #[test]
    fn collinear_controls_are_singular() {
        let src = PointSet::new(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        assert!(matches!(fit_tps(&src, &src), Err(Error::SingularSystem(_))));
        let coplanar = PointSet::new(3, vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 1., 1., 0.]).unwrap();
        assert!(matches!(fit_tps(&coplanar, &coplanar), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn zero_level_is_identity() {
        let p = probes(2, 40, 3);
        assert_close(&deform(&p, 0.0, 99).unwrap(), &p, 1e-9);
    }

    #[test]
    fn control_shift_std_is_twice_the_level() {
        // 10k shifts: 556 warps x 18 coordinates
        let level = 0.5;
        let mut shifts = Vec::new();
        let mut seed = 0;
        while shifts.len() < 10_000 {
            let w = random_warp(2, level, seed, 3).unwrap();
            for (a, b) in w.control_dst.as_flat().iter().zip(w.control_src.as_flat()) {
                shifts.push(a - b);
            }
            seed += 1;
        }
        let n = shifts.len() as f64;
        let mean = shifts.iter().sum::<f64>() / n;
        let std = (shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 2.0 * level).abs() < 0.1 * 2.0 * level, "std {std}");
    }

    #[test]
    fn negative_level_rejected() {
        assert!(matches!(random_warp(2, -0.1, 0, 3), Err(Error::Config(_))));
    }
}
