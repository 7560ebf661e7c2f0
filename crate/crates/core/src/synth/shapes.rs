//! Procedural base shapes.

use crate::error::{Error, Result};
use crate::geometry::{normalize, PointSet};
use crate::rng::Stream;

pub const SHAPE_NAMES: [&str; 6] = ["fish", "ellipse", "star", "grid2d", "sphere3d", "face3d"];

/// Smallest point count a base shape may have.
pub const MIN_POINTS: usize = 4;

// Closed fish silhouette, nose at +x, forked tail at -x.
const FISH_OUTLINE: [[f64; 2]; 18] = [
    [1.00, 0.00],
    [0.85, 0.16],
    [0.60, 0.30],
    [0.35, 0.38],
    [0.18, 0.58],
    [0.05, 0.40],
    [-0.25, 0.30],
    [-0.55, 0.14],
    [-0.90, 0.42],
    [-0.78, 0.00],
    [-0.90, -0.42],
    [-0.55, -0.14],
    [-0.25, -0.26],
    [0.08, -0.32],
    [0.22, -0.46],
    [0.32, -0.32],
    [0.60, -0.26],
    [0.85, -0.14],
];

pub fn dim_of(name: &str) -> Result<usize> {
    match name {
        "fish" | "ellipse" | "star" | "grid2d" => Ok(2),
        "sphere3d" | "face3d" => Ok(3),
        other => Err(Error::UnknownShape(other.to_string())),
    }
}

/// Normalized base shape with exactly `n` points, deterministic in `(name, n, seed)`.
///
/// The seed only shifts where samples fall along the outline or surface.
pub fn base_shape(name: &str, n: usize, seed: u64) -> Result<PointSet> {
    dim_of(name)?;
    if n < MIN_POINTS {
        return Err(Error::Config(format!("base shape needs at least {MIN_POINTS} points, got {n}")));
    }
    let phase = Stream::new(seed).uniform();
    let raw = match name {
        "fish" => sample_polygon(&FISH_OUTLINE, n, phase),
        "ellipse" => {
            let coords = (0..n)
                .flat_map(|k| {
                    let t = 2.0 * std::f64::consts::PI * (k as f64 + phase) / n as f64;
                    [t.cos(), 0.6 * t.sin()]
                })
                .collect();
            PointSet::new(2, coords)?
        }
        "star" => {
            let verts: Vec<[f64; 2]> = (0..10)
                .map(|k| {
                    let r = if k % 2 == 0 { 1.0 } else { 0.45 };
                    let t = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / 5.0;
                    [r * t.cos(), r * t.sin()]
                })
                .collect();
            sample_polygon(&verts, n, phase)
        }
        "grid2d" => {
            let side = (n as f64).sqrt().ceil() as usize;
            let coords = (0..n).flat_map(|k| [(k % side) as f64, (k / side) as f64]).collect();
            PointSet::new(2, coords)?
        }
        "sphere3d" => PointSet::new(3, fibonacci_sphere(n, phase).into_iter().flatten().collect())?,
        "face3d" => {
            let coords = fibonacci_sphere(n, phase).into_iter().flat_map(face_surface).collect();
            PointSet::new(3, coords)?
        }
        _ => unreachable!(),
    };
    normalize(&raw)
}

/// `n` points spaced evenly by arc length along a closed polygon.
fn sample_polygon(verts: &[[f64; 2]], n: usize, phase: f64) -> PointSet {
    let m = verts.len();
    let seg_len: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = (verts[i], verts[(i + 1) % m]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .collect();
    let total: f64 = seg_len.iter().sum();
    let mut coords = Vec::with_capacity(2 * n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..n {
        let s = total * (k as f64 + phase) / n as f64;
        while seg + 1 < m && seg_start + seg_len[seg] < s {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let t = ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0);
        let (a, b) = (verts[seg], verts[(seg + 1) % m]);
        coords.push(a[0] + t * (b[0] - a[0]));
        coords.push(a[1] + t * (b[1] - a[1]));
    }
    PointSet::new(2, coords).expect("finite polygon samples")
}

fn fibonacci_sphere(n: usize, phase: f64) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * k as f64 + 2.0 * std::f64::consts::PI * phase;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Head-like surface: an ellipsoid with a nose bump and a brow ridge.
fn face_surface(d: [f64; 3]) -> [f64; 3] {
    let bump = |c: [f64; 3], width: f64| {
        let dist2 = (d[0] - c[0]).powi(2) + (d[1] - c[1]).powi(2) + (d[2] - c[2]).powi(2);
        (-dist2 / width).exp()
    };
    let r = 1.0 + 0.35 * bump([0.0, 1.0, 0.0], 0.04) + 0.12 * bump([0.0, 0.8, 0.6], 0.08)
        - 0.08 * bump([0.0, 0.7, -0.7], 0.1);
    [0.75 * r * d[0], 0.85 * r * d[1], r * d[2]]
}
