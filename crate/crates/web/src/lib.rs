//! Browser demo: three panorama views rendered to RGBA frames.
//!
//! The pure functions here run natively too; the `#[wasm_bindgen]` wrappers
//! only turn errors into JS exceptions.

use panosphere::embedding::build_sphere_embedding;
use panosphere::losses::distance_to_normal;
use panosphere::projection::{p2e_project, solid_angle_coverage};
use panosphere::synthetic::sphere_room;
use panosphere::{ErpGrid, ErpRaster, PerspectiveCamera, PerspectiveRaster, Result, Vec3};
use wasm_bindgen::prelude::*;

const BACKGROUND: [u8; 3] = [24, 26, 32];
const GRATICULE: [u8; 3] = [58, 62, 74];
const SOURCE_WIDTH: usize = 160;
const SOURCE_HEIGHT: usize = 120;
const ROOM_RADIUS: f64 = 2.0;

/// An RGBA image plus one summary number for the page to display.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    stat: f64,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major RGBA bytes, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stat(&self) -> f64 {
        self.stat
    }
}

impl Frame {
    pub fn pixels(&self) -> &[u8] {
        &self.rgba
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Checkerboard with a diagonal color ramp, so warping is easy to see.
fn test_card(cam: PerspectiveCamera) -> Result<PerspectiveRaster> {
    PerspectiveRaster::from_fn(cam, 3, |x, y, out| {
        let (u, v) = (x as f64 / SOURCE_WIDTH as f64, y as f64 / SOURCE_HEIGHT as f64);
        let check = if (x / 20 + y / 20) % 2 == 0 { 1.0 } else { 0.55 };
        out[0] = check * (0.3 + 0.7 * u);
        out[1] = check * (0.3 + 0.7 * v);
        out[2] = check * (1.0 - 0.6 * u);
    })
}

fn on_graticule(grid: &ErpGrid, col: usize, row: usize) -> bool {
    let step_col = grid.width_px() / 12;
    let step_row = grid.height_px() / 6;
    (step_col > 0 && col.is_multiple_of(step_col)) || (step_row > 0 && row.is_multiple_of(step_row))
}

/// Warps a synthetic perspective test card onto a `width × height` ERP
/// canvas. `stat` is the covered fraction of the sphere.
pub fn projection_frame(
    width: usize,
    height: usize,
    xfov_deg: f64,
    azimuth_deg: f64,
    polar_deg: f64,
) -> Result<Frame> {
    let grid = ErpGrid::new(width, height)?;
    let cam = PerspectiveCamera::new(SOURCE_WIDTH, SOURCE_HEIGHT, xfov_deg.to_radians(), None)?
        .with_center(azimuth_deg.to_radians(), polar_deg.to_radians())?;
    let projection = p2e_project(&test_card(cam)?, &grid)?;
    let mut rgba = Vec::with_capacity(grid.pixel_count() * 4);
    for row in 0..height {
        for col in 0..width {
            let rgb = if projection.mask.get(col, row) > 0.5 {
                let p = projection.erp.pixel(col, row);
                [to_byte(p[0]), to_byte(p[1]), to_byte(p[2])]
            } else if on_graticule(&grid, col, row) {
                GRATICULE
            } else {
                BACKGROUND
            };
            rgba.extend_from_slice(&rgb);
            rgba.push(255);
        }
    }
    Ok(Frame {
        width,
        height,
        rgba,
        stat: solid_angle_coverage(&projection.mask),
    })
}

/// Blue for -1, white for 0, red for +1.
fn diverging(v: f64) -> [u8; 3] {
    let t = v.clamp(-1.0, 1.0);
    if t >= 0.0 {
        [255, to_byte(1.0 - t), to_byte(1.0 - t)]
    } else {
        [to_byte(1.0 + t), to_byte(1.0 + t), 255]
    }
}

/// One channel of the spherical embedding on the `H' × W'` patch grid.
/// `stat` is the channel's frequency coefficient.
pub fn embedding_frame(h_patches: usize, w_patches: usize, dim: usize, channel: usize) -> Result<Frame> {
    let embedding = build_sphere_embedding(h_patches, w_patches, dim)?;
    if channel >= dim {
        return Err(panosphere::Error::Config(format!("channel {channel} is out of range for dim {dim}")));
    }
    let m = embedding.matrix();
    let mut rgba = Vec::with_capacity(m.nrows() * 4);
    for token in 0..m.nrows() {
        rgba.extend_from_slice(&diverging(m[(token, channel)]));
        rgba.push(255);
    }
    // channels run [sin, cos] pairs over azimuth, then over polar
    let quarter = dim / 4;
    let coefficient = embedding.coefficients()[(channel / 2) % quarter];
    Ok(Frame {
        width: w_patches,
        height: h_patches,
        rgba,
        stat: coefficient,
    })
}

/// Normals of a spherical room seen from an off-center eye, colored as
/// `(n + 1) / 2`. `stat` is the mean angular error against the analytic
/// normal in degrees.
pub fn normals_frame(width: usize, height: usize, eye_x: f64, eye_y: f64, eye_z: f64) -> Result<Frame> {
    let grid = ErpGrid::new(width, height)?;
    let eye = Vec3::new(eye_x, eye_y, eye_z);
    if eye.norm() >= ROOM_RADIUS {
        return Err(panosphere::Error::Input(format!(
            "eye must stay inside the room (|eye| < {ROOM_RADIUS})"
        )));
    }
    let dist = sphere_room(grid, eye, ROOM_RADIUS)?;
    let normals = distance_to_normal(&dist, &ErpRaster::full_mask(grid))?;
    let mut rgba = Vec::with_capacity(grid.pixel_count() * 4);
    let (mut err_sum, mut counted) = (0.0, 0usize);
    for row in 0..height {
        for col in 0..width {
            let n = normals.pixel(col, row);
            let n = Vec3::new(n[0], n[1], n[2]);
            if n.norm() == 0.0 {
                rgba.extend_from_slice(&BACKGROUND);
            } else {
                rgba.extend_from_slice(&[
                    to_byte(0.5 * (n.x + 1.0)),
                    to_byte(0.5 * (n.y + 1.0)),
                    to_byte(0.5 * (n.z + 1.0)),
                ]);
                let hit = eye + grid.pixel_center_direction(col, row) * dist.get(col, row);
                let analytic = -hit.normalize();
                err_sum += n.dot(&analytic).clamp(-1.0, 1.0).acos().to_degrees();
                counted += 1;
            }
            rgba.push(255);
        }
    }
    Ok(Frame {
        width,
        height,
        rgba,
        stat: if counted == 0 { f64::NAN } else { err_sum / counted as f64 },
    })
}

fn js(e: panosphere::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = projectTestCard)]
pub fn project_test_card(
    width: usize,
    height: usize,
    xfov_deg: f64,
    azimuth_deg: f64,
    polar_deg: f64,
) -> std::result::Result<Frame, JsError> {
    projection_frame(width, height, xfov_deg, azimuth_deg, polar_deg).map_err(js)
}

#[wasm_bindgen(js_name = embeddingChannel)]
pub fn embedding_channel(
    h_patches: usize,
    w_patches: usize,
    dim: usize,
    channel: usize,
) -> std::result::Result<Frame, JsError> {
    embedding_frame(h_patches, w_patches, dim, channel).map_err(js)
}

#[wasm_bindgen(js_name = roomNormals)]
pub fn room_normals(
    width: usize,
    height: usize,
    eye_x: f64,
    eye_y: f64,
    eye_z: f64,
) -> std::result::Result<Frame, JsError> {
    normals_frame(width, height, eye_x, eye_y, eye_z).map_err(js)
}
