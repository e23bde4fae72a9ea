//! Analytic scenes used by tests, the training demo and the browser demo.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::{ErpGrid, Vec3};
use crate::raster::{ErpRaster, RasterKind};

/// Distance from `eye` to a sphere of `radius` around the origin along a unit
/// direction. `eye` must lie inside the sphere.
pub fn distance_to_sphere(eye: &Vec3, dir: &Vec3, radius: f64) -> f64 {
    let b = eye.dot(dir);
    -b + (b * b - eye.norm_squared() + radius * radius).sqrt()
}

/// Panoramic distance map seen from `eye` inside a sphere of `radius`.
pub fn sphere_room(grid: ErpGrid, eye: Vec3, radius: f64) -> Result<ErpRaster> {
    ErpRaster::from_fn(grid, RasterKind::Distance, |c, r| {
        distance_to_sphere(&eye, &grid.pixel_center_direction(c, r), radius)
    })
}

/// Distance field of the plane `z = depth` (visible half only) and the mask
/// of pixels whose ray hits it with `d_z > min_cos`.
pub fn plane_z(grid: ErpGrid, depth: f64, min_cos: f64) -> Result<(ErpRaster, ErpRaster)> {
    let dist = ErpRaster::from_fn(grid, RasterKind::Distance, |c, r| {
        let d = grid.pixel_center_direction(c, r);
        if d.z > min_cos {
            depth / d.z
        } else {
            0.0
        }
    })?;
    let mask = ErpRaster::from_fn(grid, RasterKind::Mask, |c, r| {
        f64::from(grid.pixel_center_direction(c, r).z > min_cos)
    })?;
    Ok((dist, mask))
}

/// Smooth RGB panorama that varies with direction, shaded by `distance`.
pub fn shaded_panorama(distance: &ErpRaster) -> Result<ErpRaster> {
    let grid = distance.grid();
    let mut data = Vec::with_capacity(grid.pixel_count() * 3);
    for r in 0..grid.height_px() {
        for c in 0..grid.width_px() {
            let d = grid.pixel_center_direction(c, r);
            let shade = 1.0 / (1.0 + distance.get(c, r));
            data.push(0.5 + 0.4 * d.x * shade);
            data.push(0.5 + 0.4 * d.y);
            data.push(0.5 + 0.4 * (d.z * PI).sin() * shade);
        }
    }
    ErpRaster::new(grid, RasterKind::Rgb, 3, data)
}
