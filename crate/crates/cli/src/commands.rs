//! Command bodies. Each returns the exit code after writing its report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use panosphere::curation::{build_manifest, CurationConfig};
use panosphere::embedding::build_sphere_embedding;
use panosphere::io::{read_raster_as, write_erp};
use panosphere::losses::{distance_to_normal, AlignmentMode, LossWeights};
use panosphere::metrics::{eval_dataset, format_table, Aggregation, EvalOptions, EvalPair, PairFailure, RmseForm};
use panosphere::pointcloud::{compose_translated, distance_to_points_with_normals, export_ply, import_ply, PlyFormat};
use panosphere::projection::{p2e_project, p2e_project_depth_with, solid_angle_coverage, DepthEncoding};
use panosphere::vit::{gradient_check, GradLoss, ModelConfig};
use panosphere::{ErpGrid, ErpRaster, PerspectiveCamera, RasterKind, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    AggregateArg, AlignArg, CheckLoss, ComposeArgs, Command, CurateArgs, DepthKind, EmbedArgs, EvalArgs,
    ForwardArgs, GradcheckArgs, ModelArgs, ProjectArgs, ReconstructArgs, RmseArg,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] panosphere::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    panosphere::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn emit(out: &mut dyn Write, report: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(panosphere::Error::from)?;
    writeln!(out, "{text}").map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn save_json(path: &Path, report: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(panosphere::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_erp(path: &Path, kind: RasterKind) -> CliResult<ErpRaster> {
    Ok(read_raster_as(path, kind)?.into_erp()?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn execute(command: &Command, out: &mut dyn Write) -> CliResult<i32> {
    match command {
        Command::Project(a) => project(a, out),
        Command::Curate(a) => curate(a, out),
        Command::Embed(a) => embed(a, out),
        Command::Forward(a) => forward(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Reconstruct(a) => reconstruct(a, out),
        Command::Compose(a) => compose(a, out),
    }
}

fn project(a: &ProjectArgs, out: &mut dyn Write) -> CliResult<i32> {
    if a.rgb.is_none() && a.depth.is_none() {
        return Err(CliError::Usage("project needs --rgb, --depth or both".into()));
    }
    let grid = ErpGrid::new(a.width, a.height)?;
    let rgb = a.rgb.as_deref().map(|p| read_raster_as(p, RasterKind::Rgb)).transpose()?;
    let depth = a.depth.as_deref().map(|p| read_raster_as(p, RasterKind::Distance)).transpose()?;
    if let (Some(r), Some(d)) = (&rgb, &depth) {
        if (r.width, r.height) != (d.width, d.height) {
            return Err(panosphere::Error::Input(format!(
                "rgb is {}x{} but depth is {}x{}",
                r.width, r.height, d.width, d.height
            ))
            .into());
        }
    }
    let (w, h) = rgb.as_ref().or(depth.as_ref()).map(|f| (f.width, f.height)).expect("one input");
    let cam = PerspectiveCamera::new(w, h, a.xfov.to_radians(), a.yfov.map(f64::to_radians))?
        .with_center(a.azimuth.to_radians(), a.polar.to_radians())?;
    create_dir(&a.out)?;
    let mut report = json!({
        "width": a.width,
        "height": a.height,
        "camera": {
            "width": w, "height": h,
            "xfov_deg": cam.xfov_rad().to_degrees(),
            "yfov_deg": cam.yfov_rad().to_degrees(),
            "azimuth_deg": a.azimuth, "polar_deg": a.polar,
        },
    });
    let mut mask = None;
    if let Some(r) = rgb {
        let p = p2e_project(&r.into_perspective(cam)?, &grid)?;
        let path = a.out.join("rgb.psr");
        write_erp(&path, &p.erp)?;
        report["rgb"] = json!(path);
        mask = Some(p.mask);
    }
    if let Some(d) = depth {
        let encoding = match a.depth_kind {
            DepthKind::Z => DepthEncoding::ZDepth,
            DepthKind::Radial => DepthEncoding::Radial,
        };
        let p = p2e_project_depth_with(&d.into_perspective(cam)?, &grid, encoding)?;
        let path = a.out.join("distance.psr");
        write_erp(&path, &p.erp)?;
        report["distance"] = json!(path);
        mask = Some(p.mask);
    }
    let mask = mask.expect("one input");
    let path = a.out.join("mask.psr");
    write_erp(&path, &mask)?;
    report["mask"] = json!(path);
    report["covered_pixels"] = json!(mask.data().iter().filter(|m| **m > 0.5).count());
    report["coverage"] = json!(solid_angle_coverage(&mask));
    log::info!("projected onto {}x{} ERP", a.width, a.height);
    emit(out, &report)?;
    Ok(0)
}

fn curate(a: &CurateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let mut cfg = CurationConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(cmd) = &a.outpaint_cmd {
        cfg.outpaint_cmd = Some(cmd.clone());
    }
    create_dir(&a.out)?;
    let report = build_manifest(&cfg, &a.out, a.workers)?;
    emit(out, &report)?;
    Ok(0)
}

fn embed(a: &EmbedArgs, out: &mut dyn Write) -> CliResult<i32> {
    let e = build_sphere_embedding(a.h_patches, a.w_patches, a.dim)?;
    let m = e.matrix();
    let mut report = json!({
        "h_patches": e.h_patches(),
        "w_patches": e.w_patches(),
        "dim": e.dim(),
        "tokens": e.tokens(),
        "coefficients": e.coefficients(),
        "checksum": format!("{:016x}", e.checksum()),
        "min": m.min(),
        "max": m.max(),
    });
    if let Some(path) = &a.out {
        write_erp(path, &e.to_raster()?)?;
        report["out"] = json!(path);
    }
    emit(out, &report)?;
    Ok(0)
}

/// Config file plus `--set key=value` overrides, later entries winning.
fn model_config(m: &ModelArgs) -> CliResult<ModelConfig> {
    let mut text = match &m.config {
        Some(path) => fs::read_to_string(path).map_err(|e| io_err(path, e))?,
        None => String::new(),
    };
    for item in &m.overrides {
        if !item.contains('=') {
            return Err(CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")));
        }
        text.push('\n');
        text.push_str(item);
    }
    Ok(ModelConfig::parse(&text)?)
}

fn forward(a: &ForwardArgs, out: &mut dyn Write) -> CliResult<i32> {
    let config = model_config(&a.model)?;
    let img = read_erp(&a.input, RasterKind::Rgb)?;
    let pred = panosphere::vit::forward(&img, &config, a.model.seed)?;
    write_erp(&a.out, &pred)?;
    let d = pred.data();
    emit(
        out,
        &json!({
            "config": config,
            "seed": a.model.seed,
            "width": pred.width(),
            "height": pred.height(),
            "min": d.iter().copied().fold(f64::INFINITY, f64::min),
            "max": d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "out": a.out,
        }),
    )?;
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult<i32> {
    let config = model_config(&a.model)?;
    let loss = match a.loss {
        CheckLoss::Quadratic => GradLoss::Quadratic,
        CheckLoss::Full => GradLoss::Full(LossWeights::new(a.lambda_dis, a.lambda_nor)?),
    };
    let report = gradient_check(&config, a.model.seed, a.eps, a.tol, loss)?;
    for g in &report.groups {
        log::info!(
            "{:<14} rel {:.3e} smooth {:.3e} kinks {:>4} {}",
            g.param_group,
            g.max_rel_err,
            g.smooth_rel_err,
            g.kink_crossings,
            if g.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.out {
        save_json(path, &report)?;
    }
    emit(out, &report)?;
    Ok(if report.pass { 0 } else { 1 })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalLine {
    pred_path: PathBuf,
    gt_path: PathBuf,
    #[serde(default)]
    mask_path: Option<PathBuf>,
    #[serde(default)]
    dataset: Option<String>,
}

struct LoadedPair {
    line: usize,
    pred: ErpRaster,
    gt: ErpRaster,
    mask: ErpRaster,
}

fn load_pair(base: &Path, line: &EvalLine) -> CliResult<(ErpRaster, ErpRaster, ErpRaster)> {
    let pred = read_erp(&resolve(base, &line.pred_path), RasterKind::Distance)?;
    let gt = read_erp(&resolve(base, &line.gt_path), RasterKind::Distance)?;
    let mask = match &line.mask_path {
        Some(p) => read_erp(&resolve(base, p), RasterKind::Mask)?,
        None => ErpRaster::full_mask(gt.grid()),
    };
    Ok((pred, gt, mask))
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<i32> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| io_err(&a.manifest, e))?;
    let base = parent_dir(&a.manifest);
    let options = EvalOptions {
        mode: match a.align {
            AlignArg::None => AlignmentMode::None,
            AlignArg::Median => AlignmentMode::Median,
            AlignArg::Affine => AlignmentMode::Affine,
        },
        rmse: match a.rmse {
            RmseArg::Conventional => RmseForm::Conventional,
            RmseArg::Printed => RmseForm::Printed,
        },
    };
    let aggregation = match a.aggregate {
        AggregateArg::Image => Aggregation::PerImage,
        AggregateArg::Pixel => Aggregation::Pooled,
    };

    // dataset name -> loaded pairs, in first-appearance order
    let mut groups: Vec<(String, Vec<LoadedPair>)> = Vec::new();
    let mut load_failures: Vec<(String, PairFailure)> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: EvalLine = serde_json::from_str(raw)
            .map_err(|e| panosphere::Error::Input(format!("manifest line {}: {e}", index + 1)))?;
        let name = line.dataset.clone().unwrap_or_else(|| "all".to_string());
        match load_pair(&base, &line) {
            Ok((pred, gt, mask)) => {
                let pair = LoadedPair { line: index, pred, gt, mask };
                match groups.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, v)) => v.push(pair),
                    None => groups.push((name, vec![pair])),
                }
            }
            Err(e) => {
                log::warn!("manifest line {} skipped: {e}", index + 1);
                load_failures.push((name, PairFailure { index, reason: e.to_string() }));
            }
        }
    }
    if groups.is_empty() && load_failures.is_empty() {
        return Err(panosphere::Error::Input("manifest lists no pairs".into()).into());
    }

    let mut datasets = serde_json::Map::new();
    let mut rows = Vec::new();
    let mut any_ok = false;
    for (name, pairs) in &groups {
        let result = eval_dataset(
            pairs.iter().map(|p| EvalPair {
                pred: &p.pred,
                gt: &p.gt,
                mask: &p.mask,
            }),
            options,
            aggregation,
        );
        let mut entry = match result {
            Ok(mut r) => {
                // report manifest line indices rather than in-group positions
                for f in &mut r.failures {
                    f.index = pairs[f.index].line;
                }
                any_ok = true;
                rows.push((name.clone(), r.metrics));
                serde_json::to_value(&r).map_err(panosphere::Error::from)?
            }
            Err(e) => json!({ "error": e.to_string() }),
        };
        let extra: Vec<&PairFailure> = load_failures.iter().filter(|(n, _)| n == name).map(|(_, f)| f).collect();
        if let Some(obj) = entry.as_object_mut() {
            obj.insert("load_failures".into(), json!(extra));
        }
        datasets.insert(name.clone(), entry);
    }
    for (name, f) in &load_failures {
        if !groups.iter().any(|(n, _)| n == name) {
            datasets
                .entry(name.clone())
                .or_insert_with(|| json!({ "error": "no pair could be loaded", "load_failures": [] }))["load_failures"]
                .as_array_mut()
                .expect("array")
                .push(json!(f));
        }
    }

    let table_rows: Vec<(&str, &_)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let table = format_table(&table_rows);
    eprint!("{table}");
    if let Some(path) = &a.table {
        fs::write(path, &table).map_err(|e| io_err(path, e))?;
    }
    let report = json!({
        "alignment": options.mode,
        "rmse": options.rmse,
        "aggregation": aggregation,
        "datasets": Value::Object(datasets),
    });
    if let Some(path) = &a.out {
        save_json(path, &report)?;
    }
    emit(out, &report)?;
    if !any_ok {
        return Err(panosphere::Error::Input("no dataset could be evaluated".into()).into());
    }
    Ok(0)
}

fn ply_format(binary: bool) -> PlyFormat {
    if binary {
        PlyFormat::BinaryLittleEndian
    } else {
        PlyFormat::Ascii
    }
}

fn reconstruct(a: &ReconstructArgs, out: &mut dyn Write) -> CliResult<i32> {
    let dist = read_erp(&a.distance, RasterKind::Distance)?;
    let rgb = a.rgb.as_deref().map(|p| read_erp(p, RasterKind::Rgb)).transpose()?;
    let mask = a.mask.as_deref().map(|p| read_erp(p, RasterKind::Mask)).transpose()?;
    let normals = if a.normals {
        let m = mask.clone().unwrap_or_else(|| ErpRaster::full_mask(dist.grid()));
        Some(distance_to_normal(&dist, &m)?)
    } else {
        None
    };
    let cloud = distance_to_points_with_normals(&dist, rgb.as_ref(), mask.as_ref(), normals.as_ref(), a.stride)?;
    export_ply(&cloud, &a.out, ply_format(a.binary))?;
    log::info!("wrote {} points to {}", cloud.len(), a.out.display());
    emit(
        out,
        &json!({
            "points": cloud.len(),
            "colors": cloud.colors.is_some(),
            "normals": cloud.normals.is_some(),
            "bounds": cloud.bounds().map(|(lo, hi)| [[lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]]),
            "out": a.out,
        }),
    )?;
    Ok(0)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneItem {
    cloud_path: PathBuf,
    translation: [f64; 3],
}

fn compose(a: &ComposeArgs, out: &mut dyn Write) -> CliResult<i32> {
    let text = fs::read_to_string(&a.scene).map_err(|e| io_err(&a.scene, e))?;
    let items: Vec<SceneItem> = serde_json::from_str(&text).map_err(panosphere::Error::from)?;
    let base = parent_dir(&a.scene);
    let clouds = items
        .iter()
        .map(|item| {
            let [x, y, z] = item.translation;
            Ok((import_ply(resolve(&base, &item.cloud_path))?, Vec3::new(x, y, z)))
        })
        .collect::<panosphere::Result<Vec<_>>>()?;
    let merged = compose_translated(&clouds)?;
    export_ply(&merged, &a.out, ply_format(a.binary))?;
    emit(
        out,
        &json!({
            "clouds": clouds.len(),
            "points": merged.len(),
            "bounds": merged.bounds().map(|(lo, hi)| [[lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]]),
            "out": a.out,
        }),
    )?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_append_after_file_contents() {
        let m = ModelArgs {
            config: None,
            overrides: vec!["dim=32".into(), "patch=4".into()],
            seed: 0,
        };
        let cfg = model_config(&m).unwrap();
        assert_eq!((cfg.dim, cfg.patch, cfg.key_dim), (32, 4, 16));
    }

    #[test]
    fn malformed_override_is_a_usage_error() {
        let m = ModelArgs {
            config: None,
            overrides: vec!["dim".into()],
            seed: 0,
        };
        assert_eq!(model_config(&m).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        assert_eq!(resolve(Path::new("/a"), Path::new("b.psr")), PathBuf::from("/a/b.psr"));
        assert_eq!(resolve(Path::new("/a"), Path::new("/c.psr")), PathBuf::from("/c.psr"));
    }
}
