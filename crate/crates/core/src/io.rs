//! The `PSR1` float raster container, plus 8-bit PNG at the RGB boundary.
//!
//! Layout (little endian):
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `PSR1`                                  |
//! | 4      | 4    | width (u32)                                   |
//! | 8      | 4    | height (u32)                                  |
//! | 12     | 4    | channels (u32)                                |
//! | 16     | 1    | kind (0 rgb, 1 distance, 2 mask, 3 normal, 4 embedding) |
//! | 17     | 4·W·H·C | f32 payload, row-major, channel-interleaved |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, PerspectiveCamera};
use crate::raster::{ErpRaster, PerspectiveRaster, RasterKind};

pub const MAGIC: &[u8; 4] = b"PSR1";
pub const HEADER_LEN: usize = 17;
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// A decoded raster file, not yet bound to a camera or ERP grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterFile {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub kind: RasterKind,
    pub data: Vec<f64>,
}

impl RasterFile {
    pub fn from_erp(raster: &ErpRaster) -> Self {
        Self {
            width: raster.width(),
            height: raster.height(),
            channels: raster.channels(),
            kind: raster.kind(),
            data: raster.data().to_vec(),
        }
    }

    pub fn from_perspective(raster: &PerspectiveRaster, kind: RasterKind) -> Self {
        Self {
            width: raster.width(),
            height: raster.height(),
            channels: raster.channels(),
            kind,
            data: raster.data().to_vec(),
        }
    }

    pub fn into_erp(self) -> Result<ErpRaster> {
        let grid = ErpGrid::new(self.width, self.height)?;
        ErpRaster::new(grid, self.kind, self.channels, self.data)
    }

    /// Binds the pixels to a camera with matching size.
    pub fn into_perspective(self, cam: PerspectiveCamera) -> Result<PerspectiveRaster> {
        if cam.width_px() != self.width || cam.height_px() != self.height {
            return Err(Error::Config(format!(
                "camera is {}x{} but raster is {}x{}",
                cam.width_px(),
                cam.height_px(),
                self.width,
                self.height
            )));
        }
        PerspectiveRaster::new(cam, self.channels, self.data)
    }
}

/// Serializes to the `PSR1` byte layout. Values are stored as `f32`.
pub fn encode_raster(raster: &RasterFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * raster.data.len());
    out.extend_from_slice(MAGIC);
    for v in [raster.width, raster.height, raster.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(raster.kind.code());
    for v in &raster.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

/// Parses a `PSR1` byte buffer.
pub fn decode_raster(bytes: &[u8]) -> Result<RasterFile> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (width, height, channels) = (word(4), word(8), word(12));
    let kind = RasterKind::from_code(bytes[16]).ok_or_else(|| format_err(16, format!("unsupported kind code {}", bytes[16])))?;
    if channels == 0 || kind.channels().is_some_and(|c| c != channels) {
        return Err(format_err(12, format!("{channels} channels is invalid for kind {kind:?}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format_err(4, "dimensions overflow"))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(format_err(
            HEADER_LEN + actual.min(expected),
            format!("payload length mismatch: expected {expected} bytes, got {actual}"),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(RasterFile {
        width,
        height,
        channels,
        kind,
        data,
    })
}

/// Decodes an 8-bit (or 16-bit, stripped) PNG into an RGB raster in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<RasterFile> {
    let png_err = |e: png::DecodingError| format_err(0, format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(0, "PNG: image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let src_channels = info.color_type.samples();
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(width * height * 3);
    for px in buf[..info.buffer_size()].chunks_exact(src_channels) {
        let rgb = if src_channels >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
        data.extend(rgb.iter().map(|v| f64::from(*v) / 255.0));
    }
    Ok(RasterFile {
        width,
        height,
        channels: 3,
        kind: RasterKind::Rgb,
        data,
    })
}

/// Encodes an RGB (3 channel) or mask/distance (1 channel) raster as 8-bit
/// PNG, clamping values to `[0, 1]`.
pub fn encode_png(raster: &RasterFile) -> Result<Vec<u8>> {
    let color = match raster.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Config(format!("cannot write {c}-channel raster as PNG"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width as u32, raster.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| format_err(0, format!("PNG: {e}")))?;
        let bytes: Vec<u8> = raster.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        writer.write_image_data(&bytes).map_err(|e| format_err(0, format!("PNG: {e}")))?;
    }
    Ok(out)
}

/// Reads a `PSR1` file, or a PNG (always decoded as RGB).
pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        decode_raster(&bytes)
    }
}

/// Reads a raster and checks that it has the requested kind. PNG input is
/// only accepted for RGB.
pub fn read_raster_as(path: impl AsRef<Path>, kind: RasterKind) -> Result<RasterFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = if bytes.starts_with(PNG_SIGNATURE) {
        if kind != RasterKind::Rgb {
            return Err(format_err(0, format!("{}: PNG input is only accepted for RGB, not {kind:?}", path.display())));
        }
        decode_png(&bytes)?
    } else {
        decode_raster(&bytes)?
    };
    if file.kind != kind {
        return Err(format_err(16, format!("{}: expected a {kind:?} raster, found {:?}", path.display(), file.kind)));
    }
    Ok(file)
}

pub fn write_raster(path: impl AsRef<Path>, raster: &RasterFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(raster)).map_err(|e| Error::io(path, e))
}

pub fn write_erp(path: impl AsRef<Path>, raster: &ErpRaster) -> Result<()> {
    write_raster(path, &RasterFile::from_erp(raster))
}

pub fn write_png(path: impl AsRef<Path>, raster: &RasterFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_png(raster)?).map_err(|e| Error::io(path, e))
}
