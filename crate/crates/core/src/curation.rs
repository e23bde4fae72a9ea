//! Perspective RGB-depth pairs to partial (optionally completed) panoramas,
//! and the JSON-lines training manifest that samples them.
//!
//! A dataset root holds `<stem>_rgb.{png,psr}` next to `<stem>_depth.psr`.
//! Each pair is warped onto a randomly rotated ERP grid. The RGB panorama is
//! optionally completed outside the frustum, either by an external command or
//! by a mirror-pad filler. Distance is never completed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, PerspectiveCamera};
use crate::io::{self, RasterFile};
use crate::numeric::{pairwise_sum, wrap_pi};
use crate::projection::{p2e_project, p2e_project_depth_with, solid_angle_coverage, DepthEncoding};
use crate::raster::{ErpRaster, PerspectiveRaster, RasterKind};

pub const THREADS_ENV: &str = "PANOSPHERE_THREADS";
pub const DEFAULT_OUTPAINT_TOLERANCE: f64 = 2.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceDepth {
    /// Planar z-depth, converted to radial distance.
    #[default]
    Z,
    /// Already radial distance.
    Radial,
}

impl From<SourceDepth> for DepthEncoding {
    fn from(s: SourceDepth) -> Self {
        match s {
            SourceDepth::Z => DepthEncoding::ZDepth,
            SourceDepth::Radial => DepthEncoding::Radial,
        }
    }
}

/// How the RGB panorama is completed when no external command is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filler {
    /// Leave the uncovered region black.
    None,
    /// Reflect the frustum contents across its edges.
    #[default]
    Mirror,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub root: PathBuf,
    pub xfov_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yfov_deg: Option<f64>,
    pub sampling_probability: f64,
    #[serde(default)]
    pub depth: SourceDepth,
}

fn default_width() -> usize {
    1024
}
fn default_height() -> usize {
    512
}
fn default_azimuth_range() -> f64 {
    30.0
}
fn default_polar_range() -> f64 {
    15.0
}
fn default_tolerance() -> f64 {
    DEFAULT_OUTPAINT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    /// Half-width of the uniform azimuth offset range, degrees.
    #[serde(default = "default_azimuth_range")]
    pub azimuth_offset_deg: f64,
    /// Half-width of the uniform polar offset range, degrees.
    #[serde(default = "default_polar_range")]
    pub polar_offset_deg: f64,
    #[serde(default)]
    pub seed: u64,
    /// Shell command with `{in}`, `{mask}` and `{out}` placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outpaint_cmd: Option<String>,
    /// Mean absolute RGB difference allowed inside the mask after outpainting.
    #[serde(default = "default_tolerance")]
    pub outpaint_tolerance: f64,
    #[serde(default)]
    pub filler: Filler,
    pub datasets: Vec<DatasetSpec>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            height: default_height(),
            azimuth_offset_deg: default_azimuth_range(),
            polar_offset_deg: default_polar_range(),
            seed: 0,
            outpaint_cmd: None,
            outpaint_tolerance: DEFAULT_OUTPAINT_TOLERANCE,
            filler: Filler::default(),
            datasets: Vec::new(),
        }
    }
}

impl CurationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative dataset roots resolve against the config's directory.
        if let Some(base) = path.parent() {
            for d in &mut cfg.datasets {
                if d.root.is_relative() {
                    d.root = base.join(&d.root);
                }
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<ErpGrid> {
        ErpGrid::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        for (name, v) in [
            ("azimuth_offset_deg", self.azimuth_offset_deg),
            ("polar_offset_deg", self.polar_offset_deg),
            ("outpaint_tolerance", self.outpaint_tolerance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        for d in &self.datasets {
            if !(d.sampling_probability.is_finite() && d.sampling_probability >= 0.0) {
                return Err(Error::Config(format!(
                    "dataset {}: sampling probability {} must be non-negative",
                    d.name, d.sampling_probability
                )));
            }
        }
        Ok(())
    }

    /// Dataset probabilities scaled to sum to one.
    pub fn normalized_probabilities(&self) -> Result<Vec<f64>> {
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        self.validate()?;
        let raw: Vec<f64> = self.datasets.iter().map(|d| d.sampling_probability).collect();
        let total = pairwise_sum(&raw);
        if total <= 0.0 {
            return Err(Error::Config("sampling probabilities sum to zero".into()));
        }
        Ok(raw.iter().map(|p| p / total).collect())
    }

    /// Draws `(φ_c, θ_c)` in radians, uniform in the configured ranges.
    pub fn draw_offsets(&self, rng: &mut impl Rng) -> (f64, f64) {
        let az = uniform_offset(rng, self.azimuth_offset_deg);
        let polar = uniform_offset(rng, self.polar_offset_deg);
        (az, polar)
    }
}

fn uniform_offset(rng: &mut impl Rng, half_deg: f64) -> f64 {
    if half_deg == 0.0 {
        0.0
    } else {
        rng.random_range(-half_deg..=half_deg).to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub width: usize,
    pub height: usize,
    pub xfov_deg: f64,
    pub yfov_deg: f64,
    pub azimuth_offset_deg: f64,
    pub polar_offset_deg: f64,
}

impl CameraMeta {
    fn new(cam: &PerspectiveCamera) -> Self {
        Self {
            width: cam.width_px(),
            height: cam.height_px(),
            xfov_deg: cam.xfov_rad().to_degrees(),
            yfov_deg: cam.yfov_rad().to_degrees(),
            azimuth_offset_deg: cam.center_azimuth_rad().to_degrees(),
            polar_offset_deg: cam.center_polar_rad().to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMethod {
    None,
    Mirror,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dataset: String,
    pub stem: String,
    pub source_rgb: PathBuf,
    pub source_depth: PathBuf,
    pub camera: CameraMeta,
    /// Solid-angle fraction of the sphere with valid distance.
    pub coverage: f64,
    pub fill: FillMethod,
    pub outpainted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outpaint_error: Option<String>,
}

/// A curated panorama held in memory.
#[derive(Debug, Clone)]
pub struct CuratedPanorama {
    pub rgb: ErpRaster,
    pub distance: ErpRaster,
    /// Exactly the support of `distance`.
    pub mask: ErpRaster,
    pub camera: PerspectiveCamera,
    pub fill: FillMethod,
    pub outpainted: bool,
    pub outpaint_error: Option<String>,
}

/// Folds `v` into `[-half, half]` by repeated reflection.
fn reflect(v: f64, half: f64) -> f64 {
    if v.abs() <= half {
        return v;
    }
    let m = (v + half).rem_euclid(4.0 * half);
    if m <= 2.0 * half {
        m - half
    } else {
        3.0 * half - m
    }
}

/// Fills every ERP pixel outside `coverage` by mirroring the perspective
/// image across its frustum edges, so the completion is continuous at the
/// boundary and fully deterministic.
pub fn mirror_fill(partial: &ErpRaster, coverage: &ErpRaster, src: &PerspectiveRaster) -> Result<ErpRaster> {
    let cam = src.camera();
    let grid = partial.grid();
    let (fx, fy) = cam.focal_lengths();
    let (cx, cy) = cam.principal_point();
    let half_x = cam.xfov_rad() / 2.0;
    let tan_y = (cam.yfov_rad() / 2.0).tan();
    let (w, h) = (cam.width_px() as f64, cam.height_px() as f64);
    let mut out = partial.clone();
    for row in 0..grid.height_px() {
        for col in 0..grid.width_px() {
            if coverage.get(col, row) > 0.5 {
                continue;
            }
            let angle = grid.pixel_center_angles(col, row);
            let az = reflect(wrap_pi(angle.azimuth_rad() - cam.center_azimuth_rad()), half_x);
            let polar = (angle.polar_rad() - cam.center_polar_rad()).clamp(1e-6, std::f64::consts::PI - 1e-6);
            // Image-plane y of the ray with relative angles (az, polar).
            let py = reflect(polar.cos() / (polar.sin() * az.cos()), tan_y);
            let x = (az.tan() * fx + cx).clamp(0.0, w - 1.0);
            let y = (py * fy + cy).clamp(0.0, h - 1.0);
            src.sample_bilinear(x, y, out.pixel_mut(col, row));
        }
    }
    Ok(out)
}

/// Mean absolute per-channel difference over the masked pixels.
pub fn masked_mad(a: &ErpRaster, b: &ErpRaster, mask: &ErpRaster) -> f64 {
    let c = a.channels();
    let diffs: Vec<f64> = (0..mask.grid().pixel_count())
        .filter(|&i| mask.data()[i] > 0.5)
        .flat_map(|i| (0..c).map(move |k| (a.data()[i * c + k] - b.data()[i * c + k]).abs()))
        .collect();
    if diffs.is_empty() {
        0.0
    } else {
        pairwise_sum(&diffs) / diffs.len() as f64
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

/// Runs the external outpainting hook and validates its output.
pub fn run_outpaint(
    template: &str,
    partial: &ErpRaster,
    coverage: &ErpRaster,
    work_dir: &Path,
    tolerance: f64,
) -> Result<ErpRaster> {
    fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let input = work_dir.join("outpaint_in.png");
    let mask = work_dir.join("outpaint_mask.png");
    let output = work_dir.join("outpaint_out.png");
    io::write_png(&input, &RasterFile::from_erp(partial))?;
    io::write_png(&mask, &RasterFile::from_erp(coverage))?;
    let _ = fs::remove_file(&output);
    let cmd = template
        .replace("{in}", &shell_quote(&input))
        .replace("{mask}", &shell_quote(&mask))
        .replace("{out}", &shell_quote(&output));
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .status()
        .map_err(|e| Error::Input(format!("cannot start outpaint command: {e}")))?;
    if !status.success() {
        return Err(Error::Input(format!("outpaint command exited with {status}")));
    }
    let file = io::read_raster_as(&output, RasterKind::Rgb)?;
    if file.width != partial.width() || file.height != partial.height() {
        return Err(Error::Input(format!(
            "outpaint output is {}x{}, expected {}x{}",
            file.width,
            file.height,
            partial.width(),
            partial.height()
        )));
    }
    let filled = file.into_erp()?;
    let mad = masked_mad(&filled, partial, coverage);
    if mad > tolerance {
        return Err(Error::Input(format!(
            "outpaint output differs inside the mask: mean abs diff {mad:.5} > {tolerance:.5}"
        )));
    }
    for f in [&input, &mask, &output] {
        let _ = fs::remove_file(f);
    }
    Ok(filled)
}

/// Warps one RGB-depth pair onto the sphere with random offsets.
///
/// Returns `Ok(None)` when the projection covers nothing. `work_dir` is only
/// touched when an outpaint command is configured.
pub fn curate_one(
    rgb: &PerspectiveRaster,
    depth: &PerspectiveRaster,
    encoding: SourceDepth,
    cfg: &CurationConfig,
    rng: &mut impl Rng,
    work_dir: &Path,
) -> Result<Option<CuratedPanorama>> {
    if rgb.width() != depth.width() || rgb.height() != depth.height() {
        return Err(Error::Input(format!(
            "rgb is {}x{} but depth is {}x{}",
            rgb.width(),
            rgb.height(),
            depth.width(),
            depth.height()
        )));
    }
    if rgb.channels() != 3 {
        return Err(Error::Input(format!("rgb must have 3 channels, got {}", rgb.channels())));
    }
    let grid = cfg.grid()?;
    let (az, polar) = cfg.draw_offsets(rng);
    let cam = rgb.camera().with_center(az, polar)?;
    let rgb = PerspectiveRaster::new(cam, 3, rgb.data().to_vec())?;
    let depth = PerspectiveRaster::new(cam, 1, depth.data().to_vec())?;

    let color = p2e_project(&rgb, &grid)?;
    let dist = p2e_project_depth_with(&depth, &grid, encoding.into())?;
    if dist.is_empty() {
        return Ok(None);
    }

    let (mut fill, mut outpainted, mut outpaint_error) = (FillMethod::None, false, None);
    let mut rgb_pano = color.erp.clone();
    if let Some(template) = &cfg.outpaint_cmd {
        fill = FillMethod::External;
        match run_outpaint(template, &color.erp, &color.mask, work_dir, cfg.outpaint_tolerance) {
            Ok(filled) => {
                rgb_pano = filled;
                outpainted = true;
            }
            Err(e) => {
                log::warn!("outpainting failed, keeping the partial panorama: {e}");
                outpaint_error = Some(e.to_string());
            }
        }
    } else if cfg.filler == Filler::Mirror {
        fill = FillMethod::Mirror;
        rgb_pano = mirror_fill(&color.erp, &color.mask, &rgb)?;
    }

    Ok(Some(CuratedPanorama {
        rgb: rgb_pano,
        distance: dist.erp,
        mask: dist.mask,
        camera: cam,
        fill,
        outpainted,
        outpaint_error,
    }))
}

/// A source pair found under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePair {
    pub stem: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

/// Lists `<stem>_rgb.{png,psr}` + `<stem>_depth.psr` pairs, sorted by stem.
pub fn discover_pairs(root: &Path) -> Result<Vec<SourcePair>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut rgb: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut depth: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix("_rgb.psr").or_else(|| name.strip_suffix("_rgb.png")) {
            // A .psr next to a .png of the same stem wins.
            if name.ends_with(".psr") || !rgb.contains_key(stem) {
                rgb.insert(stem.to_string(), path.clone());
            }
        } else if let Some(stem) = name.strip_suffix("_depth.psr") {
            depth.insert(stem.to_string(), path.clone());
        }
    }
    let mut pairs = Vec::new();
    for (stem, rgb_path) in rgb {
        match depth.remove(&stem) {
            Some(depth_path) => pairs.push(SourcePair {
                stem,
                rgb: rgb_path,
                depth: depth_path,
            }),
            None => log::warn!("{}: {stem} has no depth file, skipped", root.display()),
        }
    }
    Ok(pairs)
}

fn load_pair(pair: &SourcePair, spec: &DatasetSpec) -> Result<(PerspectiveRaster, PerspectiveRaster)> {
    let rgb = io::read_raster_as(&pair.rgb, RasterKind::Rgb)?;
    let depth = io::read_raster_as(&pair.depth, RasterKind::Distance)?;
    let cam = PerspectiveCamera::new(
        rgb.width,
        rgb.height,
        spec.xfov_deg.to_radians(),
        spec.yfov_deg.map(f64::to_radians),
    )?;
    Ok((rgb.into_perspective(cam)?, depth.into_perspective(cam)?))
}

/// Per-sample RNG stream, independent of scheduling order.
pub fn sample_rng(seed: u64, dataset: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((dataset as u64) << 32) | item as u64);
    rng
}

/// One line of the JSON-lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Position in the seeded epoch order.
    pub rank: usize,
    pub dataset: String,
    pub stem: String,
    /// Paths relative to the output directory.
    pub rgb: PathBuf,
    pub distance: PathBuf,
    pub mask: PathBuf,
    pub meta: PathBuf,
    pub dataset_probability: f64,
    /// Per-sample share of its dataset's probability.
    pub weight: f64,
    pub outpainted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatus {
    pub name: String,
    pub probability: f64,
    pub samples: usize,
    pub skipped: usize,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub manifest: PathBuf,
    pub samples: usize,
    pub datasets: Vec<DatasetStatus>,
    pub failures: Vec<String>,
}

/// Caps a requested worker count by `PANOSPHERE_THREADS` and the available
/// parallelism.
pub fn worker_count(requested: Option<usize>) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = requested.unwrap_or(available);
    cap.map_or(n, |c| n.min(c)).max(1)
}

/// Runs `f` over `0..n` on a bounded pool, returning results in index order.
pub fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("slot lock") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every index is processed"))
        .collect()
}

/// Seeded weighted order without replacement: each item gets the key
/// `u^(1/w)` and items are taken by descending key. Zero-weight items go last
/// in input order.
pub fn weighted_order(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random();
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, i)| i).collect()
}

enum Outcome {
    Done(Box<ManifestEntry>),
    Skipped,
    Failed(String),
}

fn write_sample(pano: &CuratedPanorama, meta: &SampleMeta, out_dir: &Path, rel: &Path, stem: &str) -> Result<[PathBuf; 4]> {
    let paths = [
        rel.join(format!("{stem}_rgb.psr")),
        rel.join(format!("{stem}_distance.psr")),
        rel.join(format!("{stem}_mask.psr")),
        rel.join(format!("{stem}_meta.json")),
    ];
    io::write_erp(out_dir.join(&paths[0]), &pano.rgb)?;
    io::write_erp(out_dir.join(&paths[1]), &pano.distance)?;
    io::write_erp(out_dir.join(&paths[2]), &pano.mask)?;
    let meta_path = out_dir.join(&paths[3]);
    let text = serde_json::to_string_pretty(meta)? + "\n";
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(paths)
}

/// Curates every discovered pair of every dataset into `out_dir` and writes
/// `manifest.jsonl` there. A dataset whose root cannot be read is reported and
/// skipped; the rest proceed.
pub fn build_manifest(cfg: &CurationConfig, out_dir: &Path, workers: Option<usize>) -> Result<CurationReport> {
    let probabilities = cfg.normalized_probabilities()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut statuses: Vec<DatasetStatus> = Vec::new();
    let mut work: Vec<(usize, usize, SourcePair)> = Vec::new();
    for (d, spec) in cfg.datasets.iter().enumerate() {
        let mut status = DatasetStatus {
            name: spec.name.clone(),
            probability: probabilities[d],
            samples: 0,
            skipped: 0,
            failed: 0,
            error: None,
        };
        match discover_pairs(&spec.root) {
            Ok(pairs) => {
                if pairs.is_empty() {
                    log::warn!("dataset {}: no samples under {}", spec.name, spec.root.display());
                }
                work.extend(pairs.into_iter().enumerate().map(|(i, p)| (d, i, p)));
            }
            Err(e) => {
                log::error!("dataset {}: {e}", spec.name);
                status.error = Some(e.to_string());
            }
        }
        statuses.push(status);
    }

    let workers = worker_count(workers);
    let outcomes = parallel_map(work.len(), workers, |k| {
        let (d, i, pair) = &work[k];
        let spec = &cfg.datasets[*d];
        let rel = PathBuf::from(&spec.name);
        let result = (|| -> Result<Outcome> {
            fs::create_dir_all(out_dir.join(&rel)).map_err(|e| Error::io(out_dir.join(&rel), e))?;
            let (rgb, depth) = load_pair(pair, spec)?;
            let mut rng = sample_rng(cfg.seed, *d, *i);
            let scratch = out_dir.join(&rel).join(format!(".{}_outpaint", pair.stem));
            let Some(pano) = curate_one(&rgb, &depth, spec.depth, cfg, &mut rng, &scratch)? else {
                log::warn!("{}/{}: projection is empty, skipped", spec.name, pair.stem);
                return Ok(Outcome::Skipped);
            };
            let _ = fs::remove_dir(&scratch);
            let meta = SampleMeta {
                dataset: spec.name.clone(),
                stem: pair.stem.clone(),
                source_rgb: pair.rgb.clone(),
                source_depth: pair.depth.clone(),
                camera: CameraMeta::new(&pano.camera),
                coverage: solid_angle_coverage(&pano.mask),
                fill: pano.fill,
                outpainted: pano.outpainted,
                outpaint_error: pano.outpaint_error.clone(),
            };
            let [rgb_p, dist_p, mask_p, meta_p] = write_sample(&pano, &meta, out_dir, &rel, &pair.stem)?;
            log::info!(
                "{}/{}: coverage {:.4}, offsets ({:.2}°, {:.2}°), fill {:?}",
                spec.name,
                pair.stem,
                meta.coverage,
                meta.camera.azimuth_offset_deg,
                meta.camera.polar_offset_deg,
                meta.fill
            );
            Ok(Outcome::Done(Box::new(ManifestEntry {
                rank: 0,
                dataset: spec.name.clone(),
                stem: pair.stem.clone(),
                rgb: rgb_p,
                distance: dist_p,
                mask: mask_p,
                meta: meta_p,
                dataset_probability: probabilities[*d],
                weight: 0.0,
                outpainted: pano.outpainted,
            })))
        })();
        result.unwrap_or_else(|e| Outcome::Failed(format!("{}/{}: {e}", spec.name, pair.stem)))
    });

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for ((d, _, _), outcome) in work.iter().zip(outcomes) {
        match outcome {
            Outcome::Done(entry) => {
                statuses[*d].samples += 1;
                entries.push(*entry);
            }
            Outcome::Skipped => statuses[*d].skipped += 1,
            Outcome::Failed(reason) => {
                log::error!("{reason}");
                statuses[*d].failed += 1;
                failures.push(reason);
            }
        }
    }
    for e in &mut entries {
        let d = cfg.datasets.iter().position(|s| s.name == e.dataset).expect("known dataset");
        e.weight = probabilities[d] / statuses[d].samples as f64;
    }
    let weights: Vec<f64> = entries.iter().map(|e| e.weight).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let order = weighted_order(&weights, &mut rng);

    let mut text = String::new();
    for (rank, &i) in order.iter().enumerate() {
        let mut e = entries[i].clone();
        e.rank = rank;
        text += &serde_json::to_string(&e)?;
        text.push('\n');
    }
    let manifest = out_dir.join("manifest.jsonl");
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(CurationReport {
        manifest,
        samples: entries.len(),
        datasets: statuses,
        failures,
    })
}

/// Reads a manifest written by [`build_manifest`].
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
