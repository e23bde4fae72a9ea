//! In-memory rasters. Values are stored as `f64`; the on-disk container is
//! `f32` (see [`crate::io`]).

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, PerspectiveCamera};

/// Channel semantics of a raster. The discriminant is the on-disk kind code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterKind {
    Rgb = 0,
    Distance = 1,
    Mask = 2,
    Normal = 3,
    Embedding = 4,
}

impl RasterKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => RasterKind::Rgb,
            1 => RasterKind::Distance,
            2 => RasterKind::Mask,
            3 => RasterKind::Normal,
            4 => RasterKind::Embedding,
            _ => return None,
        })
    }

    /// Fixed channel count, `None` for embeddings.
    pub fn channels(self) -> Option<usize> {
        match self {
            RasterKind::Rgb | RasterKind::Normal => Some(3),
            RasterKind::Distance | RasterKind::Mask => Some(1),
            RasterKind::Embedding => None,
        }
    }
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    let expected = width * height * channels;
    if len != expected {
        return Err(Error::Config(format!(
            "raster data holds {len} values, expected {width}x{height}x{channels} = {expected}"
        )));
    }
    Ok(())
}

fn channels_for(kind: RasterKind, channels: usize) -> Result<usize> {
    match kind.channels() {
        Some(c) if c != channels => Err(Error::Config(format!(
            "{kind:?} rasters have {c} channels, got {channels}"
        ))),
        _ if channels == 0 => Err(Error::Config("raster needs at least one channel".into())),
        _ => Ok(channels),
    }
}

/// Equirectangular raster, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpRaster {
    grid: ErpGrid,
    kind: RasterKind,
    channels: usize,
    data: Vec<f64>,
}

impl ErpRaster {
    pub fn new(grid: ErpGrid, kind: RasterKind, channels: usize, data: Vec<f64>) -> Result<Self> {
        let channels = channels_for(kind, channels)?;
        check_len(grid.width_px(), grid.height_px(), channels, data.len())?;
        Ok(Self {
            grid,
            kind,
            channels,
            data,
        })
    }

    /// A zero-filled raster of a fixed-channel kind.
    pub fn zeros(grid: ErpGrid, kind: RasterKind) -> Self {
        let channels = kind.channels().unwrap_or(1);
        Self {
            grid,
            kind,
            channels,
            data: vec![0.0; grid.pixel_count() * channels],
        }
    }

    /// Builds a one-channel raster by evaluating `f(col, row)`.
    pub fn from_fn(grid: ErpGrid, kind: RasterKind, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let channels = channels_for(kind, 1)?;
        let mut data = Vec::with_capacity(grid.pixel_count());
        for row in 0..grid.height_px() {
            for col in 0..grid.width_px() {
                data.push(f(col, row));
            }
        }
        Ok(Self {
            grid,
            kind,
            channels,
            data,
        })
    }

    /// An all-valid mask.
    pub fn full_mask(grid: ErpGrid) -> Self {
        Self {
            grid,
            kind: RasterKind::Mask,
            channels: 1,
            data: vec![1.0; grid.pixel_count()],
        }
    }

    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width_px()
    }

    pub fn height(&self) -> usize {
        self.grid.height_px()
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.grid.width_px() + col
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f64] {
        let i = self.index(col, row) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [f64] {
        let i = self.index(col, row) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[self.index(col, row) * self.channels]
    }

    /// Whether the pixel at flat index `i` carries a usable value for its kind:
    /// masks are nonzero, distances finite and positive, normals nonzero.
    pub fn is_valid_at(&self, i: usize) -> bool {
        let px = &self.data[i * self.channels..(i + 1) * self.channels];
        match self.kind {
            RasterKind::Mask => px[0] > 0.5,
            RasterKind::Distance => px[0].is_finite() && px[0] > 0.0,
            RasterKind::Normal => px.iter().all(|v| v.is_finite()) && px.iter().any(|v| *v != 0.0),
            RasterKind::Rgb | RasterKind::Embedding => px.iter().all(|v| v.is_finite()),
        }
    }

    /// Retags the raster with another kind that has the same channel count.
    pub fn with_kind(self, kind: RasterKind) -> Result<Self> {
        let channels = channels_for(kind, self.channels)?;
        Ok(Self { kind, channels, ..self })
    }

    /// Bilinear sample at continuous ERP coordinates `(u, v)`; the azimuth
    /// wraps around the seam and the polar coordinate clamps.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) {
        let w = self.width() as i64;
        let h = self.height() as i64;
        let x = u - 0.5;
        let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let x0 = (x0f as i64).rem_euclid(w) as usize;
        let x1 = (x0f as i64 + 1).rem_euclid(w) as usize;
        let y0 = y0f as usize;
        let y1 = (y0 + 1).min(h as usize - 1);
        let c = self.channels;
        let (i00, i10, i01, i11) = (
            self.index(x0, y0) * c,
            self.index(x1, y0) * c,
            self.index(x0, y1) * c,
            self.index(x1, y1) * c,
        );
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            let top = self.data[i00 + ch] * (1.0 - fx) + self.data[i10 + ch] * fx;
            let bottom = self.data[i01 + ch] * (1.0 - fx) + self.data[i11 + ch] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
    }

    /// Nearest-pixel sample at continuous ERP coordinates, same wrapping
    /// rules as [`Self::sample_bilinear`].
    pub fn sample_nearest(&self, u: f64, v: f64) -> &[f64] {
        let col = (u.floor() as i64).rem_euclid(self.width() as i64) as usize;
        let row = (v.floor().max(0.0) as usize).min(self.height() - 1);
        self.pixel(col, row)
    }
}

/// Raster in the image plane of a pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveRaster {
    cam: PerspectiveCamera,
    channels: usize,
    data: Vec<f64>,
}

impl PerspectiveRaster {
    pub fn new(cam: PerspectiveCamera, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("raster needs at least one channel".into()));
        }
        check_len(cam.width_px(), cam.height_px(), channels, data.len())?;
        Ok(Self { cam, channels, data })
    }

    /// Builds a raster by evaluating `f(x, y, out)` for each pixel.
    pub fn from_fn(
        cam: PerspectiveCamera,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let mut data = vec![0.0; cam.width_px() * cam.height_px() * channels];
        for (i, px) in data.chunks_mut(channels).enumerate() {
            f(i % cam.width_px(), i / cam.width_px(), px);
        }
        Self::new(cam, channels, data)
    }

    pub fn camera(&self) -> &PerspectiveCamera {
        &self.cam
    }

    pub fn width(&self) -> usize {
        self.cam.width_px()
    }

    pub fn height(&self) -> usize {
        self.cam.height_px()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width() + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample at pixel coordinates (centers at integers), clamped to
    /// the image.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let wmax = (self.width() - 1) as f64;
        let hmax = (self.height() - 1) as f64;
        let x = x.clamp(0.0, wmax);
        let y = y.clamp(0.0, hmax);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width() - 1);
        let y1 = (y0 + 1).min(self.height() - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let c = self.channels;
        let w = self.width();
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            let at = |xx: usize, yy: usize| self.data[(yy * w + xx) * c + ch];
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
    }

    /// Nearest-pixel sample, clamped to the image.
    pub fn sample_nearest(&self, x: f64, y: f64) -> &[f64] {
        let xi = (x.round().max(0.0) as usize).min(self.width() - 1);
        let yi = (y.round().max(0.0) as usize).min(self.height() - 1);
        self.pixel(xi, yi)
    }
}
