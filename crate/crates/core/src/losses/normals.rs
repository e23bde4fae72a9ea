//! Distance-to-normal (D2N) operator on equirectangular grids.
//!
//! Each pixel is lifted to `p = dist · dir(pixel center)`. Tangents are
//! central differences of the lifted points, wrapping around the azimuth seam
//! and clamping at the top/bottom rows. The normal is `t_u × t_v`, normalized
//! and flipped when needed so that it faces the origin (`n · p ≤ 0`).
//! A pixel is invalid when any stencil pixel is invalid or the cross product
//! degenerates.

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, Vec3};
use crate::raster::{ErpRaster, RasterKind};

/// Unit directions through every pixel center, row-major.
pub fn pixel_directions(grid: &ErpGrid) -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(grid.pixel_count());
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            dirs.push(grid.pixel_center_direction(col, row));
        }
    }
    dirs
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    center: usize,
    left: usize,
    right: usize,
    up: usize,
    down: usize,
}

fn stencil(grid: &ErpGrid, col: usize, row: usize) -> Stencil {
    let w = grid.width_px();
    let h = grid.height_px();
    let at = |c: usize, r: usize| r * w + c;
    Stencil {
        center: at(col, row),
        left: at((col + w - 1) % w, row),
        right: at((col + 1) % w, row),
        up: at(col, row.saturating_sub(1)),
        down: at(col, (row + 1).min(h - 1)),
    }
}

/// Normals with their validity flags; invalid entries are zero.
#[derive(Debug, Clone)]
pub struct NormalField {
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct D2nTape {
    grid: ErpGrid,
    dirs: Vec<Vec3>,
    points: Vec<Vec3>,
    crosses: Vec<Vec3>,
    orientation: Vec<f64>,
    valid: Vec<bool>,
}

/// Forward D2N on a flat distance slice. `dirs` must come from
/// [`pixel_directions`] for the same grid.
pub fn d2n_forward(grid: &ErpGrid, dirs: &[Vec3], dist: &[f64], valid_in: &[bool]) -> (NormalField, D2nTape) {
    let n = grid.pixel_count();
    let points: Vec<Vec3> = dist.iter().zip(dirs).map(|(d, dir)| dir * *d).collect();
    let mut normals = vec![Vec3::zeros(); n];
    let mut crosses = vec![Vec3::zeros(); n];
    let mut orientation = vec![0.0; n];
    let mut valid = vec![false; n];
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            let s = stencil(grid, col, row);
            if ![s.center, s.left, s.right, s.up, s.down].iter().all(|&i| valid_in[i]) {
                continue;
            }
            let tu = points[s.right] - points[s.left];
            let tv = points[s.down] - points[s.up];
            let cross = tu.cross(&tv);
            let len = cross.norm();
            if !len.is_finite() || len <= 1e-12 * tu.norm() * tv.norm() {
                continue;
            }
            let sign = if cross.dot(&points[s.center]) > 0.0 { -1.0 } else { 1.0 };
            normals[s.center] = cross * (sign / len);
            crosses[s.center] = cross;
            orientation[s.center] = sign;
            valid[s.center] = true;
        }
    }
    let tape = D2nTape {
        grid: *grid,
        dirs: dirs.to_vec(),
        points,
        crosses,
        orientation,
        valid: valid.clone(),
    };
    (NormalField { normals, valid }, tape)
}

/// Gradient of a scalar with respect to the distances, given its gradient
/// with respect to each output normal.
pub fn d2n_backward(tape: &D2nTape, grad_normals: &[Vec3]) -> Vec<f64> {
    let grid = &tape.grid;
    let mut grad_points = vec![Vec3::zeros(); grid.pixel_count()];
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            let s = stencil(grid, col, row);
            if !tape.valid[s.center] {
                continue;
            }
            let g = grad_normals[s.center];
            if g == Vec3::zeros() {
                continue;
            }
            let cross = tape.crosses[s.center];
            let len = cross.norm();
            let unit = cross / len;
            // d(c/|c|) = (I - ĉĉᵀ)/|c|
            let g_cross = (g - unit * unit.dot(&g)) * (tape.orientation[s.center] / len);
            let tu = tape.points[s.right] - tape.points[s.left];
            let tv = tape.points[s.down] - tape.points[s.up];
            let g_tu = tv.cross(&g_cross);
            let g_tv = g_cross.cross(&tu);
            grad_points[s.right] += g_tu;
            grad_points[s.left] -= g_tu;
            grad_points[s.down] += g_tv;
            grad_points[s.up] -= g_tv;
        }
    }
    grad_points.iter().zip(&tape.dirs).map(|(g, d)| g.dot(d)).collect()
}

/// Surface normals of a distance raster. Invalid pixels hold `(0, 0, 0)`.
pub fn distance_to_normal(dist: &ErpRaster, mask: &ErpRaster) -> Result<ErpRaster> {
    if dist.channels() != 1 {
        return Err(Error::Config("D2N expects a single-channel distance raster".into()));
    }
    super::align::check_same_grid(dist, mask)?;
    let grid = dist.grid();
    let valid_in: Vec<bool> = (0..grid.pixel_count())
        .map(|i| mask.is_valid_at(i) && dist.data()[i].is_finite() && dist.data()[i] > 0.0)
        .collect();
    let dirs = pixel_directions(&grid);
    let (field, _) = d2n_forward(&grid, &dirs, dist.data(), &valid_in);
    normals_to_raster(&grid, &field)
}

pub(crate) fn normals_to_raster(grid: &ErpGrid, field: &NormalField) -> Result<ErpRaster> {
    let data = field.normals.iter().flat_map(|n| [n.x, n.y, n.z]).collect();
    ErpRaster::new(*grid, RasterKind::Normal, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_sphere_normals_point_inwards() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let dist = ErpRaster::from_fn(grid, RasterKind::Distance, |_, _| 1.0).unwrap();
        let normals = distance_to_normal(&dist, &ErpRaster::full_mask(grid)).unwrap();
        for row in 2..30 {
            for col in 0..64 {
                let n = normals.pixel(col, row);
                let p = grid.pixel_center_direction(col, row);
                let n = Vec3::new(n[0], n[1], n[2]);
                assert!((n.norm() - 1.0).abs() < 1e-9);
                assert!((n + p).norm() < 2e-3, "row {row}: {n:?} vs {p:?}");
            }
        }
    }

    #[test]
    fn masked_stencil_invalidates() {
        let grid = ErpGrid::new(16, 8).unwrap();
        let dist = ErpRaster::from_fn(grid, RasterKind::Distance, |_, _| 2.0).unwrap();
        let mut mask = ErpRaster::full_mask(grid);
        mask.data_mut()[3 * 16 + 5] = 0.0;
        let normals = distance_to_normal(&dist, &mask).unwrap();
        for (c, r) in [(5, 3), (4, 3), (6, 3), (5, 2), (5, 4)] {
            assert!(!normals.is_valid_at(r * 16 + c), "({c},{r})");
        }
        assert!(normals.is_valid_at(3 * 16 + 8));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let grid = ErpGrid::new(12, 6).unwrap();
        let dirs = pixel_directions(&grid);
        let dist: Vec<f64> = (0..72).map(|i| 1.0 + 0.3 * ((i as f64) * 0.7).sin()).collect();
        let valid = vec![true; 72];
        // scalar objective: Σ w·n with fixed weights
        let weights: Vec<Vec3> = (0..72)
            .map(|i| Vec3::new((i as f64).cos(), 0.5, (i as f64 * 0.3).sin()))
            .collect();
        let objective = |d: &[f64]| -> f64 {
            let (f, _) = d2n_forward(&grid, &dirs, d, &valid);
            f.normals.iter().zip(&weights).map(|(n, w)| n.dot(w)).sum()
        };
        let (_, tape) = d2n_forward(&grid, &dirs, &dist, &valid);
        let analytic = d2n_backward(&tape, &weights);
        let eps = 1e-6;
        for k in 0..72 {
            let mut plus = dist.clone();
            plus[k] += eps;
            let mut minus = dist.clone();
            minus[k] -= eps;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            assert!((numeric - analytic[k]).abs() < 1e-6 * (1.0 + numeric.abs()), "k={k}: {numeric} vs {}", analytic[k]);
        }
    }
}
