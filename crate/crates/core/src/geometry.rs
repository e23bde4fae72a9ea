//! Closed-form spherical and pinhole geometry.
//!
//! Conventions:
//! - polar angle θ is colatitude measured from the +y axis (`θ = acos(d_y)`),
//!   so θ grows downwards in image space;
//! - azimuth φ is measured from +z towards +x (`φ = atan2(d_x, d_z)`);
//! - perspective pixels are centered at `(W-1)/2`, while the equirectangular
//!   maps `u = φW/2π`, `v = θH/π` are edge based. A raster pixel `(i, j)`
//!   covers `[i, i+1) × [j, j+1)` in ERP coordinates and is evaluated at its
//!   center `(i + 0.5, j + 0.5)`.
//!
//! The optical-center offsets `(φ_c, θ_c)` are added to the angles directly
//! rather than applied as a rotation of the ray. For large `θ_c` this is not a
//! rigid motion; it is kept as-is.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::numeric::wrap_two_pi;

pub type Vec3 = Vector3<f64>;

/// Pinhole camera with known horizontal/vertical fields of view and the
/// spherical position of its optical center.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerspectiveCamera {
    width_px: usize,
    height_px: usize,
    xfov_rad: f64,
    yfov_rad: f64,
    center_azimuth_rad: f64,
    center_polar_rad: f64,
}

fn check_fov(field: &'static str, fov: f64) -> Result<()> {
    if !(fov > 0.0 && fov < PI) {
        return Err(Error::domain(
            field,
            format!("field of view {fov} rad is outside (0, π)"),
        ));
    }
    Ok(())
}

impl PerspectiveCamera {
    /// Builds a camera centered at `(φ_c, θ_c) = (0, 0)`.
    ///
    /// When `yfov_rad` is `None` it is derived as `xfov · height / width`.
    pub fn new(width_px: usize, height_px: usize, xfov_rad: f64, yfov_rad: Option<f64>) -> Result<Self> {
        if width_px == 0 {
            return Err(Error::domain("width_px", "must be positive"));
        }
        if height_px == 0 {
            return Err(Error::domain("height_px", "must be positive"));
        }
        check_fov("xfov_rad", xfov_rad)?;
        let yfov_rad = yfov_rad.unwrap_or(xfov_rad * height_px as f64 / width_px as f64);
        check_fov("yfov_rad", yfov_rad)?;
        Ok(Self {
            width_px,
            height_px,
            xfov_rad,
            yfov_rad,
            center_azimuth_rad: 0.0,
            center_polar_rad: 0.0,
        })
    }

    /// Sets the optical-center offsets `(φ_c, θ_c)`.
    pub fn with_center(mut self, azimuth_rad: f64, polar_rad: f64) -> Result<Self> {
        if !azimuth_rad.is_finite() {
            return Err(Error::domain("center_azimuth_rad", "must be finite"));
        }
        if !polar_rad.is_finite() {
            return Err(Error::domain("center_polar_rad", "must be finite"));
        }
        self.center_azimuth_rad = azimuth_rad;
        self.center_polar_rad = polar_rad;
        Ok(self)
    }

    pub fn width_px(&self) -> usize {
        self.width_px
    }

    pub fn height_px(&self) -> usize {
        self.height_px
    }

    pub fn xfov_rad(&self) -> f64 {
        self.xfov_rad
    }

    pub fn yfov_rad(&self) -> f64 {
        self.yfov_rad
    }

    pub fn center_azimuth_rad(&self) -> f64 {
        self.center_azimuth_rad
    }

    pub fn center_polar_rad(&self) -> f64 {
        self.center_polar_rad
    }

    /// Principal point `((W-1)/2, (H-1)/2)`.
    pub fn principal_point(&self) -> (f64, f64) {
        (
            (self.width_px as f64 - 1.0) / 2.0,
            (self.height_px as f64 - 1.0) / 2.0,
        )
    }

    /// Focal lengths `(f_x, f_y)` in pixels.
    pub fn focal_lengths(&self) -> (f64, f64) {
        focal_lengths(self)
    }
}

/// `f = size / (2 tan(fov / 2))` per axis.
pub fn focal_lengths(cam: &PerspectiveCamera) -> (f64, f64) {
    let fx = cam.width_px as f64 / (2.0 * (cam.xfov_rad / 2.0).tan());
    let fy = cam.height_px as f64 / (2.0 * (cam.yfov_rad / 2.0).tan());
    (fx, fy)
}

/// Longitude/colatitude pair. Azimuth lives in `[0, 2π)`, polar in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SphericalAngle {
    azimuth_rad: f64,
    polar_rad: f64,
}

impl SphericalAngle {
    /// Wraps the azimuth modulo 2π and clamps the polar angle to `[0, π]`.
    pub fn new(azimuth_rad: f64, polar_rad: f64) -> Self {
        Self {
            azimuth_rad: wrap_two_pi(azimuth_rad),
            polar_rad: polar_rad.clamp(0.0, PI),
        }
    }

    pub fn azimuth_rad(&self) -> f64 {
        self.azimuth_rad
    }

    pub fn polar_rad(&self) -> f64 {
        self.polar_rad
    }
}

/// Equirectangular grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ErpGrid {
    width_px: usize,
    height_px: usize,
}

impl ErpGrid {
    pub fn new(width_px: usize, height_px: usize) -> Result<Self> {
        if width_px < 2 {
            return Err(Error::domain("width_px", "ERP width must be at least 2"));
        }
        if height_px < 1 {
            return Err(Error::domain("height_px", "ERP height must be at least 1"));
        }
        Ok(Self { width_px, height_px })
    }

    pub fn width_px(&self) -> usize {
        self.width_px
    }

    pub fn height_px(&self) -> usize {
        self.height_px
    }

    pub fn pixel_count(&self) -> usize {
        self.width_px * self.height_px
    }

    /// Angles at the center of raster pixel `(col, row)`.
    pub fn pixel_center_angles(&self, col: usize, row: usize) -> SphericalAngle {
        erp_pixel_to_angles(col as f64 + 0.5, row as f64 + 0.5, self)
    }

    /// Unit direction through the center of raster pixel `(col, row)`.
    pub fn pixel_center_direction(&self, col: usize, row: usize) -> Vec3 {
        angles_to_direction(self.pixel_center_angles(col, row))
    }

    /// Exact solid angle (sr) covered by one pixel of the given row.
    /// Summed over the whole grid this equals 4π.
    pub fn pixel_solid_angle(&self, row: usize) -> f64 {
        let h = self.height_px as f64;
        let top = PI * row as f64 / h;
        let bottom = PI * (row as f64 + 1.0) / h;
        (TAU / self.width_px as f64) * (top.cos() - bottom.cos())
    }
}

/// Unit ray through perspective pixel `(x, y)`; fractional coordinates allowed.
pub fn pixel_ray(cam: &PerspectiveCamera, x: f64, y: f64) -> Vec3 {
    camera_vector(cam, x, y).normalize()
}

/// The unnormalized ray `[(x - cx)/f_x, (y - cy)/f_y, 1]`.
pub fn camera_vector(cam: &PerspectiveCamera, x: f64, y: f64) -> Vec3 {
    let (fx, fy) = cam.focal_lengths();
    let (cx, cy) = cam.principal_point();
    Vec3::new((x - cx) / fx, (y - cy) / fy, 1.0)
}

/// Converts a unit camera ray to absolute spherical angles using the camera's
/// optical-center offsets.
pub fn ray_to_angles(dir: &Vec3, cam: &PerspectiveCamera) -> Result<SphericalAngle> {
    let norm = dir.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::domain("dir", format!("expected a unit vector, got norm {norm}")));
    }
    let azimuth = dir.x.atan2(dir.z) + cam.center_azimuth_rad;
    let polar = dir.y.clamp(-1.0, 1.0).acos() + cam.center_polar_rad;
    Ok(SphericalAngle::new(azimuth, polar))
}

/// Continuous ERP coordinates `(u, v)` of an angle.
pub fn angles_to_erp_pixel(angle: SphericalAngle, grid: &ErpGrid) -> (f64, f64) {
    let u = angle.azimuth_rad / TAU * grid.width_px as f64;
    let v = angle.polar_rad / PI * grid.height_px as f64;
    (u, v)
}

/// Angles of continuous ERP coordinates `(u, v)`.
pub fn erp_pixel_to_angles(u: f64, v: f64, grid: &ErpGrid) -> SphericalAngle {
    SphericalAngle::new(
        TAU * u / grid.width_px as f64,
        PI * v / grid.height_px as f64,
    )
}

/// Unit direction of an angle with zero offsets:
/// `(sinθ sinφ, cosθ, sinθ cosφ)`.
pub fn angles_to_direction(angle: SphericalAngle) -> Vec3 {
    direction_from_raw(angle.azimuth_rad, angle.polar_rad)
}

/// Same as [`angles_to_direction`] without wrapping/clamping the inputs.
pub(crate) fn direction_from_raw(azimuth: f64, polar: f64) -> Vec3 {
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(sp * sa, cp, sp * ca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn focal_length_examples() {
        let cam = PerspectiveCamera::new(512, 512, deg(90.0), None).unwrap();
        assert_abs_diff_eq!(cam.focal_lengths().0, 256.0, epsilon = 1e-12);

        // 512 / (2 tan 30°) = 256·√3, evaluated with mpmath at 50 digits
        let cam = PerspectiveCamera::new(512, 512, deg(60.0), None).unwrap();
        assert_abs_diff_eq!(cam.focal_lengths().0, 443.40500673763259, epsilon = 1e-9);

        let cam = PerspectiveCamera::new(1024, 512, deg(90.0), None).unwrap();
        assert_abs_diff_eq!(cam.yfov_rad(), deg(45.0), epsilon = 1e-15);
        // 512 / (2 tan 22.5°)
        assert_abs_diff_eq!(cam.focal_lengths().1, 618.03867196751233, epsilon = 1e-9);
    }

    #[test]
    fn invalid_fov_names_field() {
        let err = PerspectiveCamera::new(10, 10, PI, None).unwrap_err();
        assert!(err.to_string().contains("xfov_rad"), "{err}");
        let err = PerspectiveCamera::new(10, 10, 1.0, Some(0.0)).unwrap_err();
        assert!(err.to_string().contains("yfov_rad"), "{err}");
        // derived yfov out of range
        let err = PerspectiveCamera::new(10, 40, 1.0, None).unwrap_err();
        assert!(err.to_string().contains("yfov_rad"), "{err}");
    }

    #[test]
    fn pixel_ray_examples() {
        let cam = PerspectiveCamera::new(3, 3, deg(90.0), Some(deg(90.0))).unwrap();
        let c = pixel_ray(&cam, 1.0, 1.0);
        assert_eq!(c, Vec3::new(0.0, 0.0, 1.0));
        let d = pixel_ray(&cam, 2.0, 1.0);
        // (2/3, 0, 1) / sqrt(13/9)
        let n = (13.0f64 / 9.0).sqrt();
        assert_abs_diff_eq!(d.x, (2.0 / 3.0) / n, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x, 0.5547001962252291, epsilon = 1e-12);
        assert_abs_diff_eq!(d.z, 0.8320502943378437, epsilon = 1e-12);
        assert_eq!(d.y, 0.0);
    }

    #[test]
    fn ray_to_angles_examples() {
        let cam = PerspectiveCamera::new(4, 4, 1.0, None).unwrap();
        let a = ray_to_angles(&Vec3::new(0.0, 0.0, 1.0), &cam).unwrap();
        assert_eq!(a.azimuth_rad(), 0.0);
        assert_abs_diff_eq!(a.polar_rad(), PI / 2.0, epsilon = 1e-15);

        let off = cam.with_center(deg(30.0), deg(-15.0)).unwrap();
        let a = ray_to_angles(&Vec3::new(0.0, 0.0, 1.0), &off).unwrap();
        assert_abs_diff_eq!(a.azimuth_rad(), deg(30.0), epsilon = 1e-15);
        assert_abs_diff_eq!(a.polar_rad(), deg(75.0), epsilon = 1e-15);

        let a = ray_to_angles(&Vec3::new(1.0, 0.0, 0.0), &cam).unwrap();
        assert_abs_diff_eq!(a.azimuth_rad(), PI / 2.0, epsilon = 1e-15);

        assert!(ray_to_angles(&Vec3::new(2.0, 0.0, 0.0), &cam).is_err());
    }

    #[test]
    fn erp_mapping_examples() {
        let g = ErpGrid::new(1024, 512).unwrap();
        let (u, v) = angles_to_erp_pixel(SphericalAngle::new(PI, PI / 2.0), &g);
        assert_abs_diff_eq!(u, 512.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 256.0, epsilon = 1e-12);
        assert_eq!(angles_to_erp_pixel(SphericalAngle::new(0.0, 0.0), &g), (0.0, 0.0));
        let (u, _) = angles_to_erp_pixel(SphericalAngle::new(TAU - 1e-9, 1.0), &g);
        assert!(u < 1024.0 && u > 1023.99);

        let a = erp_pixel_to_angles(512.0, 256.0, &g);
        assert_abs_diff_eq!(a.azimuth_rad(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(a.polar_rad(), PI / 2.0, epsilon = 1e-15);
        let a = erp_pixel_to_angles(0.0, 512.0, &g);
        assert_eq!((a.azimuth_rad(), a.polar_rad()), (0.0, PI));
    }

    #[test]
    fn direction_examples() {
        let d = angles_to_direction(SphericalAngle::new(0.0, PI / 2.0));
        assert_abs_diff_eq!(d, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let d = angles_to_direction(SphericalAngle::new(PI / 2.0, PI / 2.0));
        assert_abs_diff_eq!(d, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        for phi in [0.0, 1.0, 4.0] {
            let d = angles_to_direction(SphericalAngle::new(phi, 0.0));
            assert_eq!(d, Vec3::new(0.0, 1.0, 0.0));
        }
    }

    #[test]
    fn solid_angles_cover_sphere() {
        let g = ErpGrid::new(64, 32).unwrap();
        let total: f64 = (0..32).map(|r| g.pixel_solid_angle(r) * 64.0).sum();
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(ErpGrid::new(1, 1).is_err());
        assert!(ErpGrid::new(2, 0).is_err());
        assert!(ErpGrid::new(2, 1).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn direction_angle_round_trip(phi in 0.0..TAU, theta in 0.01..(PI - 0.01)) {
            let cam = PerspectiveCamera::new(2, 2, 1.0, None).unwrap();
            let a = SphericalAngle::new(phi, theta);
            let d = angles_to_direction(a);
            proptest::prop_assert!((d.norm() - 1.0).abs() < 1e-12);
            let back = ray_to_angles(&d, &cam).unwrap();
            let dphi = crate::numeric::wrap_pi(back.azimuth_rad() - phi).abs();
            proptest::prop_assert!(dphi < 1e-9);
            proptest::prop_assert!((back.polar_rad() - theta).abs() < 1e-9);
        }

        #[test]
        fn erp_maps_are_inverse(u in 0.0..1024.0f64, v in 0.0..=512.0f64) {
            let g = ErpGrid::new(1024, 512).unwrap();
            let (u2, v2) = angles_to_erp_pixel(erp_pixel_to_angles(u, v, &g), &g);
            proptest::prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
        }

        #[test]
        fn focal_lengths_positive(fov in 1e-6..(PI - 1e-6)) {
            let cam = PerspectiveCamera::new(7, 7, fov, Some(fov)).unwrap();
            let (fx, fy) = cam.focal_lengths();
            proptest::prop_assert!(fx > 0.0 && fy > 0.0);
        }

        #[test]
        fn pixel_rays_are_unit(x in -10.0..100.0f64, y in -10.0..100.0f64) {
            let cam = PerspectiveCamera::new(90, 60, 1.2, None).unwrap();
            proptest::prop_assert!((pixel_ray(&cam, x, y).norm() - 1.0).abs() < 1e-12);
        }
    }
}
