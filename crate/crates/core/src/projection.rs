//! Perspective ⇄ equirectangular warping.
//!
//! P2E is an inverse warp: every ERP pixel center is mapped back into the
//! camera, and sampled only when it falls inside the frustum. RGB is sampled
//! bilinearly; depth uses nearest neighbor so that values never mix across
//! depth edges. Pixels outside the frustum hold 0 in every output.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{
    angles_to_erp_pixel, camera_vector, direction_from_raw, pixel_ray, ray_to_angles, ErpGrid,
    PerspectiveCamera, SphericalAngle, Vec3,
};
use crate::numeric::{pairwise_sum, wrap_pi};
use crate::raster::{ErpRaster, PerspectiveRaster, RasterKind};

/// Output of a P2E projection: the warped raster plus its coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub erp: ErpRaster,
    pub mask: ErpRaster,
}

impl Projection {
    /// Number of ERP pixels covered by the camera.
    pub fn covered_pixels(&self) -> usize {
        self.mask.data().iter().filter(|m| **m > 0.5).count()
    }

    pub fn is_empty(&self) -> bool {
        self.covered_pixels() == 0
    }
}

/// How the source depth raster encodes geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthEncoding {
    /// z component along the optical axis; converted to radial distance.
    #[default]
    ZDepth,
    /// Already a radial distance; copied unchanged.
    Radial,
}

/// Where an absolute direction lands in a camera's image plane.
#[derive(Debug, Clone, Copy)]
pub struct CameraHit {
    /// Continuous pixel coordinates (centers at integers).
    pub x: f64,
    pub y: f64,
    /// Unit ray in the camera frame.
    pub ray: Vec3,
}

/// Maps absolute spherical angles into the camera image, undoing the
/// additive optical-center offsets. Returns `None` outside the frustum.
pub fn locate_in_camera(cam: &PerspectiveCamera, angle: SphericalAngle) -> Option<CameraHit> {
    let azimuth = wrap_pi(angle.azimuth_rad() - cam.center_azimuth_rad());
    let polar = angle.polar_rad() - cam.center_polar_rad();
    if !(0.0..=PI).contains(&polar) {
        return None;
    }
    let ray = direction_from_raw(azimuth, polar);
    if ray.z <= 0.0 {
        return None;
    }
    let px = ray.x / ray.z;
    let py = ray.y / ray.z;
    if px.abs() > (cam.xfov_rad() / 2.0).tan() || py.abs() > (cam.yfov_rad() / 2.0).tan() {
        return None;
    }
    let (fx, fy) = cam.focal_lengths();
    let (cx, cy) = cam.principal_point();
    Some(CameraHit {
        x: px * fx + cx,
        y: py * fy + cy,
        ray,
    })
}

/// Radial distance of a perspective sample with z-depth `z` at pixel `(x, y)`.
pub fn depth_to_distance(cam: &PerspectiveCamera, x: f64, y: f64, z: f64) -> f64 {
    z * camera_vector(cam, x, y).norm()
}

fn erp_kind_for(channels: usize) -> RasterKind {
    if channels == 3 {
        RasterKind::Rgb
    } else {
        RasterKind::Embedding
    }
}

/// Projects a perspective image onto the sphere with bilinear sampling.
///
/// Three-channel inputs produce an `Rgb` raster; other channel counts are
/// tagged `Embedding`.
pub fn p2e_project(src: &PerspectiveRaster, grid: &ErpGrid) -> Result<Projection> {
    let cam = src.camera();
    let c = src.channels();
    let mut data = vec![0.0; grid.pixel_count() * c];
    let mut mask = vec![0.0; grid.pixel_count()];
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            if let Some(hit) = locate_in_camera(cam, grid.pixel_center_angles(col, row)) {
                let i = row * grid.width_px() + col;
                src.sample_bilinear(hit.x, hit.y, &mut data[i * c..(i + 1) * c]);
                mask[i] = 1.0;
            }
        }
    }
    finish(grid, erp_kind_for(c), c, data, mask)
}

/// Projects a z-depth map to an ERP radial-distance map (nearest sampling).
pub fn p2e_project_depth(src_depth: &PerspectiveRaster, grid: &ErpGrid) -> Result<Projection> {
    p2e_project_depth_with(src_depth, grid, DepthEncoding::ZDepth)
}

/// Depth projection with an explicit source encoding.
///
/// Zero-valued source pixels are treated as missing and left out of the
/// mask; negative or non-finite values are rejected.
pub fn p2e_project_depth_with(
    src_depth: &PerspectiveRaster,
    grid: &ErpGrid,
    encoding: DepthEncoding,
) -> Result<Projection> {
    if src_depth.channels() != 1 {
        return Err(Error::Config(format!(
            "depth rasters have one channel, got {}",
            src_depth.channels()
        )));
    }
    if let Some(pos) = src_depth.data().iter().position(|d| !d.is_finite() || *d < 0.0) {
        let w = src_depth.width();
        return Err(Error::Input(format!(
            "depth value {} at pixel ({}, {}) is not a positive finite number",
            src_depth.data()[pos],
            pos % w,
            pos / w
        )));
    }
    let cam = src_depth.camera();
    let mut data = vec![0.0; grid.pixel_count()];
    let mut mask = vec![0.0; grid.pixel_count()];
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            let Some(hit) = locate_in_camera(cam, grid.pixel_center_angles(col, row)) else {
                continue;
            };
            let z = src_depth.sample_nearest(hit.x, hit.y)[0];
            if z <= 0.0 {
                continue;
            }
            let i = row * grid.width_px() + col;
            data[i] = match encoding {
                // |d| = 1 / d̂_z for the exact ray through this ERP pixel
                DepthEncoding::ZDepth => z / hit.ray.z,
                DepthEncoding::Radial => z,
            };
            mask[i] = 1.0;
        }
    }
    finish(grid, RasterKind::Distance, 1, data, mask)
}

fn finish(grid: &ErpGrid, kind: RasterKind, channels: usize, data: Vec<f64>, mask: Vec<f64>) -> Result<Projection> {
    let projection = Projection {
        erp: ErpRaster::new(*grid, kind, channels, data)?,
        mask: ErpRaster::new(*grid, RasterKind::Mask, 1, mask)?,
    };
    if projection.is_empty() {
        log::warn!("projection covers no ERP pixel");
    }
    Ok(projection)
}

/// Samples an ERP raster into a perspective view (bilinear, seam-wrapping).
pub fn e2p_sample(src: &ErpRaster, cam: &PerspectiveCamera) -> Result<PerspectiveRaster> {
    let grid = src.grid();
    PerspectiveRaster::from_fn(*cam, src.channels(), |x, y, out| {
        let ray = pixel_ray(cam, x as f64, y as f64);
        // pixel_ray is unit length, so this cannot fail
        let angle = ray_to_angles(&ray, cam).expect("unit ray");
        let (u, v) = angles_to_erp_pixel(angle, &grid);
        src.sample_bilinear(u, v, out);
    })
}

/// Fraction of the full sphere covered by a mask, weighting each pixel by
/// its solid angle.
pub fn solid_angle_coverage(mask: &ErpRaster) -> f64 {
    let grid = mask.grid();
    let rows: Vec<f64> = (0..grid.height_px())
        .map(|row| {
            let covered = (0..grid.width_px()).filter(|&col| mask.get(col, row) > 0.5).count();
            covered as f64 * grid.pixel_solid_angle(row)
        })
        .collect();
    pairwise_sum(&rows) / (4.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize, fov_deg: f64) -> PerspectiveCamera {
        PerspectiveCamera::new(w, h, fov_deg.to_radians(), Some(fov_deg.to_radians())).unwrap()
    }

    #[test]
    fn constant_source_stays_constant() {
        let c = cam(32, 32, 90.0);
        let src = PerspectiveRaster::from_fn(c, 3, |_, _, o| o.fill(0.37)).unwrap();
        let grid = ErpGrid::new(128, 64).unwrap();
        let p = p2e_project(&src, &grid).unwrap();
        assert_eq!(p.erp.kind(), RasterKind::Rgb);
        assert!(p.covered_pixels() > 0);
        for (i, px) in p.erp.data().chunks(3).enumerate() {
            if p.mask.data()[i] > 0.5 {
                assert!(px.iter().all(|v| (v - 0.37).abs() < 1e-6));
            } else {
                assert!(px.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn center_ray_distance_equals_depth() {
        let c = cam(5, 5, 90.0);
        assert_eq!(depth_to_distance(&c, 2.0, 2.0, 3.5), 3.5);
        // corner of a 90° camera: dx = dy = -(W-1)/W with f = W/2
        let d = (-(4.0f64) / 5.0).powi(2);
        let expected = (2.0 * d + 1.0).sqrt();
        assert!((depth_to_distance(&c, 0.0, 0.0, 1.0) - expected).abs() < 1e-12);
        assert!((expected - 1.5099668870541498).abs() < 1e-12);
    }

    #[test]
    fn depth_projection_rejects_negative_values() {
        let c = cam(4, 4, 60.0);
        let mut data = vec![1.0; 16];
        data[5] = -2.0;
        let src = PerspectiveRaster::new(c, 1, data).unwrap();
        let err = p2e_project_depth(&src, &ErpGrid::new(32, 16).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn zero_depth_is_left_out_of_the_mask() {
        let c = cam(4, 4, 90.0);
        let src = PerspectiveRaster::new(c, 1, vec![0.0; 16]).unwrap();
        let p = p2e_project_depth(&src, &ErpGrid::new(32, 16).unwrap()).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn depth_mask_has_exact_support() {
        let c = cam(16, 16, 80.0).with_center(0.3, -0.1).unwrap();
        let src = PerspectiveRaster::from_fn(c, 1, |x, y, o| o[0] = 1.0 + (x + y) as f64).unwrap();
        let p = p2e_project_depth(&src, &ErpGrid::new(64, 32).unwrap()).unwrap();
        for (d, m) in p.erp.data().iter().zip(p.mask.data()) {
            assert_eq!(*d > 0.0, *m > 0.5);
        }
    }

    #[test]
    fn distance_is_never_below_depth() {
        let c = cam(24, 16, 100.0);
        let src = PerspectiveRaster::from_fn(c, 1, |x, _, o| o[0] = 2.0 + x as f64 * 0.1).unwrap();
        let p = p2e_project_depth(&src, &ErpGrid::new(128, 64).unwrap()).unwrap();
        let grid = p.erp.grid();
        for row in 0..grid.height_px() {
            for col in 0..grid.width_px() {
                if p.mask.get(col, row) > 0.5 {
                    let hit = locate_in_camera(&c, grid.pixel_center_angles(col, row)).unwrap();
                    let z = src.sample_nearest(hit.x, hit.y)[0];
                    assert!(p.erp.get(col, row) >= z);
                }
            }
        }
    }

    #[test]
    fn camera_facing_pole_with_offsets_outside_range_covers_nothing() {
        // θ_c = π pushes every ray past the south pole.
        let c = cam(8, 8, 30.0).with_center(0.0, PI).unwrap();
        let src = PerspectiveRaster::from_fn(c, 3, |_, _, o| o.fill(1.0)).unwrap();
        let p = p2e_project(&src, &ErpGrid::new(64, 32).unwrap()).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn azimuth_shift_by_whole_columns_shifts_output_exactly() {
        let grid = ErpGrid::new(96, 48).unwrap();
        let base = cam(20, 20, 70.0);
        let src = PerspectiveRaster::from_fn(base, 1, |x, y, o| o[0] = 1.0 + (x * 31 + y * 7) as f64).unwrap();
        let p0 = p2e_project_depth_with(&src, &grid, DepthEncoding::Radial).unwrap();
        for k in [1usize, 5, 50] {
            let shifted = base.with_center(k as f64 * 2.0 * PI / 96.0, 0.0).unwrap();
            let src_k = PerspectiveRaster::new(shifted, 1, src.data().to_vec()).unwrap();
            let pk = p2e_project_depth_with(&src_k, &grid, DepthEncoding::Radial).unwrap();
            for row in 0..48 {
                for col in 0..96 {
                    let a = p0.erp.get(col, row);
                    let b = pk.erp.get((col + k) % 96, row);
                    assert_eq!(a, b, "k={k} col={col} row={row}");
                }
            }
        }
    }

    #[test]
    fn e2p_of_constant_is_constant() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let erp = ErpRaster::new(grid, RasterKind::Rgb, 3, vec![0.8; 64 * 32 * 3]).unwrap();
        let c = cam(16, 16, 90.0).with_center(1.0, 0.2).unwrap();
        let view = e2p_sample(&erp, &c).unwrap();
        assert!(view.data().iter().all(|v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn e2p_is_continuous_across_the_seam() {
        let grid = ErpGrid::new(256, 128).unwrap();
        // smooth periodic content in azimuth
        let erp = ErpRaster::from_fn(grid, RasterKind::Distance, |c, _| {
            2.0 + ((c as f64 + 0.5) / 256.0 * 2.0 * PI).cos()
        })
        .unwrap();
        // looking straight at φ = 0, so the seam runs through the image center
        let c = PerspectiveCamera::new(64, 8, 60f64.to_radians(), None).unwrap();
        let view = e2p_sample(&erp, &c).unwrap();
        let row = 4;
        for x in 0..63 {
            let a = view.pixel(x, row)[0];
            let b = view.pixel(x + 1, row)[0];
            assert!((a - b).abs() < 0.01, "jump at x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn coverage_of_full_mask_is_one() {
        let grid = ErpGrid::new(64, 32).unwrap();
        let m = ErpRaster::full_mask(grid);
        assert!((solid_angle_coverage(&m) - 1.0).abs() < 1e-12);
    }
}
