//! Distance panoramas to 3D points, translation-only composition, PLY I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{angles_to_direction, erp_pixel_to_angles, Vec3};
use crate::raster::{ErpRaster, RasterKind};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// RGB in `[0, 1]`.
    pub colors: Option<Vec<Vec3>>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks finiteness and that the optional arrays match the point count.
    pub fn validate(&self) -> Result<()> {
        for (name, arr) in [("colors", &self.colors), ("normals", &self.normals)] {
            if let Some(a) = arr {
                if a.len() != self.points.len() {
                    return Err(Error::Input(format!(
                        "{name} has {} entries for {} points",
                        a.len(),
                        self.points.len()
                    )));
                }
            }
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Input("point cloud has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Axis-aligned bounds as `(min, max)`, or `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            points: self.points.iter().map(|p| p + offset).collect(),
            ..self.clone()
        }
    }
}

fn check_grid(a: &ErpRaster, b: &ErpRaster, what: &str) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Input(format!(
            "{what} is {}x{} but distance is {}x{}",
            b.width(),
            b.height(),
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Lifts every `stride`-th valid pixel (in both directions) to
/// `distance · direction`. Normals, when given, come from a `Normal` raster.
pub fn distance_to_points(
    dist: &ErpRaster,
    rgb: Option<&ErpRaster>,
    mask: Option<&ErpRaster>,
    stride: usize,
) -> Result<PointCloud> {
    distance_to_points_with_normals(dist, rgb, mask, None, stride)
}

pub fn distance_to_points_with_normals(
    dist: &ErpRaster,
    rgb: Option<&ErpRaster>,
    mask: Option<&ErpRaster>,
    normals: Option<&ErpRaster>,
    stride: usize,
) -> Result<PointCloud> {
    if stride == 0 {
        return Err(Error::domain("stride", "must be at least 1"));
    }
    if dist.channels() != 1 {
        return Err(Error::Input("distance raster must have one channel".into()));
    }
    if let Some(r) = rgb {
        check_grid(dist, r, "rgb")?;
        if r.channels() != 3 {
            return Err(Error::Input("rgb raster must have three channels".into()));
        }
    }
    if let Some(m) = mask {
        check_grid(dist, m, "mask")?;
    }
    if let Some(n) = normals {
        check_grid(dist, n, "normals")?;
        if n.kind() != RasterKind::Normal {
            return Err(Error::Input("normal raster must have kind normal".into()));
        }
    }
    let grid = dist.grid();
    let mut cloud = PointCloud {
        colors: rgb.map(|_| Vec::new()),
        normals: normals.map(|_| Vec::new()),
        ..Default::default()
    };
    for row in (0..grid.height_px()).step_by(stride) {
        for col in (0..grid.width_px()).step_by(stride) {
            let i = dist.index(col, row);
            let d = dist.data()[i];
            if !(d.is_finite() && d > 0.0) || mask.is_some_and(|m| m.data()[i] <= 0.5) {
                continue;
            }
            let angle = erp_pixel_to_angles(col as f64 + 0.5, row as f64 + 0.5, &grid);
            cloud.points.push(angles_to_direction(angle) * d);
            if let (Some(out), Some(r)) = (cloud.colors.as_mut(), rgb) {
                let c = r.pixel(col, row);
                out.push(Vec3::new(c[0], c[1], c[2]));
            }
            if let (Some(out), Some(n)) = (cloud.normals.as_mut(), normals) {
                let c = n.pixel(col, row);
                out.push(Vec3::new(c[0], c[1], c[2]));
            }
        }
    }
    Ok(cloud)
}

/// Concatenates clouds after shifting each by its translation. Colors and
/// normals survive only if every input carries them.
pub fn compose_translated(clouds: &[(PointCloud, Vec3)]) -> Result<PointCloud> {
    if clouds.is_empty() {
        return Err(Error::Input("nothing to compose".into()));
    }
    let all_colors = clouds.iter().all(|(c, _)| c.colors.is_some());
    let all_normals = clouds.iter().all(|(c, _)| c.normals.is_some());
    let mut out = PointCloud {
        colors: all_colors.then(Vec::new),
        normals: all_normals.then(Vec::new),
        ..Default::default()
    };
    for (cloud, t) in clouds {
        out.points.extend(cloud.points.iter().map(|p| p + t));
        if let (Some(dst), Some(src)) = (out.colors.as_mut(), cloud.colors.as_ref()) {
            dst.extend_from_slice(src);
        }
        if let (Some(dst), Some(src)) = (out.normals.as_mut(), cloud.normals.as_ref()) {
            dst.extend_from_slice(src);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

/// Quantizes a `[0, 1]` color channel to a byte, rounding halves up.
pub fn color_to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Shortest-style `%.9g`: nine significant digits, trailing zeros dropped.
fn format_sig9(v: f32) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = f64::from(v).abs().log10().floor() as i32;
    let s = if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        // Rounding can push the exponent up, which would add a tenth digit.
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 9 && decimals > 0 {
            format!("{v:.prec$}", prec = decimals - 1)
        } else {
            s
        }
    } else {
        return format!("{v:.8e}");
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn ply_header(pc: &PointCloud, format: PlyFormat) -> String {
    let mut h = String::from("ply\n");
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = writeln!(h, "format {fmt} 1.0");
    let _ = writeln!(h, "element vertex {}", pc.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(h, "property float {axis}");
    }
    if pc.colors.is_some() {
        for c in ["red", "green", "blue"] {
            let _ = writeln!(h, "property uchar {c}");
        }
    }
    if pc.normals.is_some() {
        for n in ["nx", "ny", "nz"] {
            let _ = writeln!(h, "property float {n}");
        }
    }
    h.push_str("end_header\n");
    h
}

pub fn encode_ply(pc: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    pc.validate()?;
    let mut out = ply_header(pc, format).into_bytes();
    for i in 0..pc.len() {
        let p = pc.points[i];
        let color = pc.colors.as_ref().map(|c| c[i]);
        let normal = pc.normals.as_ref().map(|n| n[i]);
        match format {
            PlyFormat::Ascii => {
                let mut fields: Vec<String> = p.iter().map(|v| format_sig9(*v as f32)).collect();
                if let Some(c) = color {
                    fields.extend(c.iter().map(|v| color_to_byte(*v).to_string()));
                }
                if let Some(n) = normal {
                    fields.extend(n.iter().map(|v| format_sig9(*v as f32)));
                }
                out.extend_from_slice(fields.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend(c.iter().map(|v| color_to_byte(*v)));
                }
                if let Some(n) = normal {
                    for v in n.iter() {
                        out.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn export_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ply(pc, format)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    U8,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "uchar" | "uint8" => Some(Self::U8),
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

fn ply_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

/// Parses PLY files with a single `vertex` element, as written by
/// [`encode_ply`]. Both ASCII and little-endian binary are accepted.
pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
        .ok_or_else(|| ply_err(0, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| ply_err(0, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(ply_err(0, "missing ply magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(ply_err(0, format!("unsupported PLY format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| ply_err(0, format!("bad vertex count {n}")))?)
            }
            ["element", other, ..] => return Err(ply_err(0, format!("unsupported element {other}"))),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty).ok_or_else(|| ply_err(0, format!("unsupported property type {ty}")))?;
                props.push((name.to_string(), scalar));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(ply_err(0, format!("unexpected header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| ply_err(0, "missing format line"))?;
    let count = count.ok_or_else(|| ply_err(0, "missing vertex element"))?;
    let slot = |name: &str| props.iter().position(|(n, _)| n == name);
    let find3 = |names: [&str; 3]| -> Result<Option<[usize; 3]>> {
        let found: Vec<Option<usize>> = names.iter().map(|n| slot(n)).collect();
        match found.as_slice() {
            [Some(a), Some(b), Some(c)] => Ok(Some([*a, *b, *c])),
            [None, None, None] => Ok(None),
            _ => Err(ply_err(0, format!("incomplete property set {names:?}"))),
        }
    };
    let xyz = find3(["x", "y", "z"])?.ok_or_else(|| ply_err(0, "missing x y z properties"))?;
    let rgb = find3(["red", "green", "blue"])?;
    let nrm = find3(["nx", "ny", "nz"])?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            let body = std::str::from_utf8(&bytes[header_end..]).map_err(|_| ply_err(header_end, "body is not UTF-8"))?;
            let mut it = body.lines().filter(|l| !l.trim().is_empty());
            for k in 0..count {
                let line = it.next().ok_or_else(|| ply_err(bytes.len(), format!("expected {count} vertices, got {k}")))?;
                let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| ply_err(header_end, format!("vertex {k}: {e}")))?;
                if vals.len() != props.len() {
                    return Err(ply_err(header_end, format!("vertex {k}: expected {} values, got {}", props.len(), vals.len())));
                }
                rows.push(vals);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            let expected = stride * count;
            let actual = bytes.len() - header_end;
            if actual != expected {
                return Err(ply_err(
                    header_end + actual.min(expected),
                    format!("payload length mismatch: expected {expected} bytes, got {actual}"),
                ));
            }
            for rec in bytes[header_end..].chunks_exact(stride.max(1)).take(count) {
                let mut at = 0;
                let mut vals = Vec::with_capacity(props.len());
                for (_, s) in &props {
                    let b = &rec[at..at + s.size()];
                    vals.push(match s {
                        Scalar::U8 => f64::from(b[0]),
                        Scalar::F32 => f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))),
                        Scalar::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
                    });
                    at += s.size();
                }
                rows.push(vals);
            }
        }
    }

    let pick = |r: &[f64], idx: [usize; 3]| Vec3::new(r[idx[0]], r[idx[1]], r[idx[2]]);
    let cloud = PointCloud {
        points: rows.iter().map(|r| pick(r, xyz)).collect(),
        colors: rgb.map(|idx| rows.iter().map(|r| pick(r, idx) / 255.0).collect()),
        normals: nrm.map(|idx| rows.iter().map(|r| pick(r, idx)).collect()),
    };
    cloud.validate()?;
    Ok(cloud)
}

pub fn import_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ErpGrid;
    use proptest::prelude::*;

    fn unit_sphere(w: usize, h: usize) -> PointCloud {
        let grid = ErpGrid::new(w, h).unwrap();
        let dist = ErpRaster::from_fn(grid, RasterKind::Distance, |_, _| 1.0).unwrap();
        distance_to_points(&dist, None, None, 1).unwrap()
    }

    #[test]
    fn unit_distance_lies_on_sphere() {
        let pc = unit_sphere(16, 8);
        assert_eq!(pc.len(), 128);
        for p in &pc.points {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_and_mask_count() {
        let grid = ErpGrid::new(16, 8).unwrap();
        let dist = ErpRaster::from_fn(grid, RasterKind::Distance, |c, _| if c == 0 { 0.0 } else { 2.0 }).unwrap();
        let mask = ErpRaster::from_fn(grid, RasterKind::Mask, |_, r| if r < 4 { 1.0 } else { 0.0 }).unwrap();
        let pc = distance_to_points(&dist, None, Some(&mask), 2).unwrap();
        // rows 0, 2 pass the mask; columns 2, 4, .., 14 are valid
        assert_eq!(pc.len(), 2 * 7);
        assert!(distance_to_points(&dist, None, None, 0).is_err());
    }

    #[test]
    fn compose_bbox_extent() {
        let axes = PointCloud {
            points: vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()],
            ..Default::default()
        };
        let composed = compose_translated(&[(axes.clone(), Vec3::zeros()), (axes, Vec3::new(3.0, 0.0, 0.0))]).unwrap();
        let (lo, hi) = composed.bounds().unwrap();
        assert!((hi.x - lo.x - 5.0).abs() < 1e-12);
        assert_eq!(composed.len(), 12);
        assert!(compose_translated(&[]).is_err());
    }

    #[test]
    fn compose_single_identity() {
        let pc = unit_sphere(8, 4);
        assert_eq!(compose_translated(&[(pc.clone(), Vec3::zeros())]).unwrap(), pc);
    }

    #[test]
    fn colors_round_half_up() {
        assert_eq!(color_to_byte(0.0), 0);
        assert_eq!(color_to_byte(1.0), 255);
        assert_eq!(color_to_byte(0.5), 128);
        assert_eq!(color_to_byte(2.5 / 255.0), 3);
        assert_eq!(color_to_byte(-1.0), 0);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-0.5), "-0.5");
        assert_eq!(format_sig9(0.1), "0.100000001");
        assert_eq!(format_sig9(123456.79), "123456.789");
        assert_eq!(format_sig9(1e-7), "1.00000001e-7");
        assert_eq!(format_sig9(9.9999999), "10");
    }

    #[test]
    fn empty_cloud_is_valid_ply() {
        let bytes = encode_ply(&PointCloud::default(), PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0"));
        assert!(decode_ply(&bytes).unwrap().is_empty());
    }

    #[test]
    fn decode_rejects_truncated_binary() {
        let mut pc = unit_sphere(4, 2);
        pc.colors = Some(vec![Vec3::new(0.2, 0.4, 0.6); pc.len()]);
        let mut bytes = encode_ply(&pc, PlyFormat::BinaryLittleEndian).unwrap();
        bytes.pop();
        assert!(decode_ply(&bytes).unwrap_err().to_string().contains("expected 120"));
    }

    proptest! {
        #[test]
        fn ply_round_trip(coords in proptest::collection::vec(-1e4f64..1e4, 3..30), binary: bool) {
            let n = coords.len() / 3;
            let points: Vec<Vec3> = (0..n).map(|i| Vec3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2])).collect();
            let colors: Vec<Vec3> = (0..n).map(|i| Vec3::repeat(i as f64 / 255.0)).collect();
            let normals: Vec<Vec3> = points.iter().map(|p| p.try_normalize(1e-12).unwrap_or(Vec3::z())).collect();
            let pc = PointCloud { points, colors: Some(colors), normals: Some(normals) };
            let format = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
            let back = decode_ply(&encode_ply(&pc, format).unwrap()).unwrap();
            prop_assert_eq!(back.len(), n);
            for (a, b) in back.points.iter().zip(&pc.points) {
                for k in 0..3 {
                    prop_assert_eq!(a[k] as f32, b[k] as f32);
                }
            }
            for (a, b) in back.colors.unwrap().iter().zip(pc.colors.as_ref().unwrap()) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn translation_inverts(tx in -10.0f64..10.0, ty in -10.0f64..10.0, tz in -10.0f64..10.0) {
            let pc = unit_sphere(8, 4);
            let t = Vec3::new(tx, ty, tz);
            let back = pc.translated(&t).translated(&-t);
            for (a, b) in back.points.iter().zip(&pc.points) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn scaling_distance_scales_norm(s in 0.1f64..10.0) {
            let grid = ErpGrid::new(8, 4).unwrap();
            let d1 = ErpRaster::from_fn(grid, RasterKind::Distance, |c, r| 1.0 + 0.1 * (c + r) as f64).unwrap();
            let d2 = ErpRaster::from_fn(grid, RasterKind::Distance, |c, r| s * (1.0 + 0.1 * (c + r) as f64)).unwrap();
            let a = distance_to_points(&d1, None, None, 1).unwrap();
            let b = distance_to_points(&d2, None, None, 1).unwrap();
            for (pa, pb) in a.points.iter().zip(&b.points) {
                prop_assert!((pb.norm() - s * pa.norm()).abs() < 1e-9 * pb.norm());
            }
        }
    }
}
