//! Scale and scale-and-shift alignment of predictions to ground truth.

use crate::error::{Error, Result};
use crate::numeric::{median, pairwise_sum};
use crate::raster::{ErpRaster, RasterKind};

/// How predictions are brought to the ground-truth scale before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Metric: compared as-is.
    None,
    /// Scale-invariant: `pred · median(gt) / median(pred)`.
    #[default]
    Median,
    /// Affine-invariant: least-squares `scale · (pred + shift)`.
    Affine,
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "metric" => Ok(Self::None),
            "median" => Ok(Self::Median),
            "affine" => Ok(Self::Affine),
            other => Err(Error::Config(format!("unknown alignment mode `{other}`"))),
        }
    }
}

pub(crate) fn check_same_grid(a: &ErpRaster, b: &ErpRaster) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Config(format!(
            "raster sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Flat indices of Ω: mask set, ground truth valid, prediction finite.
pub fn valid_pixels(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<Vec<usize>> {
    check_same_grid(pred, gt)?;
    check_same_grid(pred, mask)?;
    if pred.channels() != 1 || gt.channels() != 1 {
        return Err(Error::Config("alignment works on single-channel distance rasters".into()));
    }
    Ok((0..pred.grid().pixel_count())
        .filter(|&i| mask.is_valid_at(i) && gt.is_valid_at(i) && pred.data()[i].is_finite())
        .collect())
}

fn gather(raster: &ErpRaster, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| raster.data()[i]).collect()
}

/// Ratio `median(gt|Ω) / median(pred|Ω)`.
pub fn median_scale(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<f64> {
    let idx = valid_pixels(pred, gt, mask)?;
    let mp = median(&gather(pred, &idx)).ok_or_else(|| Error::Alignment("no valid pixels".into()))?;
    let mg = median(&gather(gt, &idx)).ok_or_else(|| Error::Alignment("no valid pixels".into()))?;
    if mp.is_nan() || mp <= 0.0 {
        return Err(Error::Alignment(format!("prediction median {mp} is not positive")));
    }
    if mg.is_nan() || mg <= 0.0 {
        return Err(Error::Alignment(format!("ground-truth median {mg} is not positive")));
    }
    Ok(mg / mp)
}

/// Rescales `pred` so its median over Ω equals the ground-truth median.
pub fn median_align(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<ErpRaster> {
    let scale = median_scale(pred, gt, mask)?;
    scaled(pred, |v| v * scale)
}

/// Least-squares fit of `scale · (pred + shift)` to the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
}

impl AffineFit {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * (v + self.shift)
    }
}

/// Solves the 2-parameter normal equations over Ω.
pub fn affine_fit(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<AffineFit> {
    let idx = valid_pixels(pred, gt, mask)?;
    if idx.len() < 2 {
        return Err(Error::Alignment(format!("affine fit needs 2 valid pixels, got {}", idx.len())));
    }
    let p = gather(pred, &idx);
    let g = gather(gt, &idx);
    let n = idx.len() as f64;
    let p_mean = pairwise_sum(&p) / n;
    let g_mean = pairwise_sum(&g) / n;
    let spp: Vec<f64> = p.iter().map(|v| (v - p_mean).powi(2)).collect();
    let spg: Vec<f64> = p.iter().zip(&g).map(|(a, b)| (a - p_mean) * (b - g_mean)).collect();
    let spp = pairwise_sum(&spp);
    let spg = pairwise_sum(&spg);
    let p_scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spp <= (1e-14 * p_scale).powi(2) * n {
        return Err(Error::Alignment("prediction is constant over the valid set".into()));
    }
    let a = spg / spp;
    let b = g_mean - a * p_mean;
    if a == 0.0 {
        return Err(Error::Alignment("prediction is uncorrelated with ground truth".into()));
    }
    Ok(AffineFit { scale: a, shift: b / a })
}

/// `scale · (pred + shift)` with the least-squares parameters.
pub fn affine_align(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<ErpRaster> {
    let fit = affine_fit(pred, gt, mask)?;
    scaled(pred, |v| fit.apply(v))
}

/// Aligns according to `mode`.
pub fn align(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster, mode: AlignmentMode) -> Result<ErpRaster> {
    match mode {
        AlignmentMode::None => {
            valid_pixels(pred, gt, mask)?;
            Ok(pred.clone())
        }
        AlignmentMode::Median => median_align(pred, gt, mask),
        AlignmentMode::Affine => affine_align(pred, gt, mask),
    }
}

fn scaled(pred: &ErpRaster, f: impl Fn(f64) -> f64) -> Result<ErpRaster> {
    let data = pred.data().iter().map(|v| f(*v)).collect();
    ErpRaster::new(pred.grid(), RasterKind::Distance, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ErpGrid;

    fn raster(values: &[f64]) -> ErpRaster {
        let g = ErpGrid::new(values.len().max(2), 1).unwrap();
        let mut v = values.to_vec();
        v.resize(g.pixel_count(), 0.0);
        ErpRaster::new(g, RasterKind::Distance, 1, v).unwrap()
    }

    fn mask_for(values: &[f64]) -> ErpRaster {
        ErpRaster::full_mask(raster(values).grid())
    }

    #[test]
    fn median_examples() {
        let gt = raster(&[10.0, 20.0, 40.0]);
        let m = mask_for(&[0.0; 3]);
        let out = median_align(&raster(&[1.0, 2.0, 3.0]), &gt, &m).unwrap();
        assert_eq!(out.data(), &[10.0, 20.0, 30.0]);

        let gt = raster(&[3.0, 1.0, 7.5]);
        let out = median_align(&raster(&[6.0, 2.0, 15.0]), &gt, &m).unwrap();
        assert_eq!(out.data(), gt.data());
        let out = median_align(&gt, &gt, &m).unwrap();
        assert_eq!(out.data(), gt.data());
    }

    #[test]
    fn median_of_aligned_matches_gt() {
        let gt = raster(&[1.3, 4.1, 2.2, 9.0, 0.7]);
        let pred = raster(&[0.2, 0.9, 0.35, 1.1, 0.31]);
        let m = mask_for(&[0.0; 5]);
        let a = median_align(&pred, &gt, &m).unwrap();
        let mg = median(gt.data()).unwrap();
        assert!((median(a.data()).unwrap() - mg).abs() <= 1e-9 * mg);
    }

    #[test]
    fn median_errors() {
        let gt = raster(&[1.0, 2.0]);
        let empty = ErpRaster::zeros(gt.grid(), RasterKind::Mask);
        assert!(matches!(median_align(&gt, &gt, &empty), Err(Error::Alignment(_))));
        let zero = raster(&[0.0, 0.0]);
        assert!(matches!(median_align(&zero, &gt, &mask_for(&[0.0; 2])), Err(Error::Alignment(_))));
    }

    #[test]
    fn affine_examples() {
        let m = mask_for(&[0.0; 2]);
        let fit = affine_fit(&raster(&[1.0, 2.0]), &raster(&[5.0, 9.0]), &m).unwrap();
        assert!((fit.scale - 4.0).abs() < 1e-12);
        assert!((fit.scale * fit.shift - 1.0).abs() < 1e-12);
        let out = affine_align(&raster(&[1.0, 2.0]), &raster(&[5.0, 9.0]), &m).unwrap();
        assert!((out.data()[0] - 5.0).abs() < 1e-12 && (out.data()[1] - 9.0).abs() < 1e-12);

        let gt = [1.5, 2.25, 7.0, 3.3];
        let pred: Vec<f64> = gt.iter().map(|g| 0.4 * g - 2.0).collect();
        let m = mask_for(&gt);
        let out = affine_align(&raster(&pred), &raster(&gt), &m).unwrap();
        for (o, g) in out.data().iter().zip(gt) {
            assert!((o - g).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_rejects_constant_prediction() {
        let m = mask_for(&[0.0; 3]);
        let err = affine_fit(&raster(&[2.0, 2.0, 2.0]), &raster(&[1.0, 2.0, 3.0]), &m).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
        let one = raster(&[1.0, 0.0]);
        let gt = raster(&[2.0, 0.0]);
        assert!(affine_fit(&one, &gt, &mask_for(&[0.0; 2])).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("median".parse::<AlignmentMode>().unwrap(), AlignmentMode::Median);
        assert_eq!("AFFINE".parse::<AlignmentMode>().unwrap(), AlignmentMode::Affine);
        assert!("foo".parse::<AlignmentMode>().is_err());
    }
}
