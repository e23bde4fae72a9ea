//! Depth evaluation metrics: AbsRel, RMSE, δ₁, δ₂.
//!
//! All four numbers are reported in percent (RMSE is multiplied by 100 as
//! well, matching the usual benchmark tables).

use crate::error::{Error, Result};
use crate::losses::{align, valid_pixels, AlignmentMode};
use crate::numeric::{pairwise_mean, pairwise_sum};
use crate::raster::ErpRaster;

/// Which RMSE normalization to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmseForm {
    /// `sqrt(mean(Δ²))`.
    #[default]
    Conventional,
    /// `sqrt(Σ Δ²) / |Ω|`, the mean taken outside the root.
    Printed,
}

impl std::str::FromStr for RmseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(Self::Conventional),
            "printed" => Ok(Self::Printed),
            other => Err(Error::Config(format!("unknown RMSE form `{other}`"))),
        }
    }
}

/// How per-image results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted mean of per-image metrics.
    #[default]
    PerImage,
    /// Metrics over the union of all valid pixels.
    Pooled,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" | "per-image" => Ok(Self::PerImage),
            "pixel" | "pooled" => Ok(Self::Pooled),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub mode: AlignmentMode,
    pub rmse: RmseForm,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub absrel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub n_valid: usize,
    pub alignment: AlignmentMode,
}

/// Per-pixel pieces that every metric is built from.
#[derive(Debug, Clone, Default)]
struct PixelTerms {
    rel: Vec<f64>,
    sq: Vec<f64>,
    within1: usize,
    within2: usize,
}

impl PixelTerms {
    fn extend(&mut self, other: PixelTerms) {
        self.rel.extend(other.rel);
        self.sq.extend(other.sq);
        self.within1 += other.within1;
        self.within2 += other.within2;
    }

    fn report(&self, form: RmseForm, mode: AlignmentMode) -> MetricReport {
        let n = self.rel.len();
        let nf = n as f64;
        let sq = pairwise_sum(&self.sq);
        let rmse = match form {
            RmseForm::Conventional => (sq / nf).sqrt(),
            RmseForm::Printed => sq.sqrt() / nf,
        };
        MetricReport {
            absrel: 100.0 * pairwise_sum(&self.rel) / nf,
            rmse: 100.0 * rmse,
            delta1: 100.0 * self.within1 as f64 / nf,
            delta2: 100.0 * self.within2 as f64 / nf,
            n_valid: n,
            alignment: mode,
        }
    }
}

fn pixel_terms(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster, mode: AlignmentMode) -> Result<PixelTerms> {
    let idx = valid_pixels(pred, gt, mask)?;
    if idx.is_empty() {
        return Err(Error::Input("no valid pixels to evaluate".into()));
    }
    // valid_pixels only admits gt > 0; zero gt under the mask is an input error
    if let Some(i) = (0..gt.grid().pixel_count()).find(|&i| mask.is_valid_at(i) && gt.data()[i] == 0.0) {
        return Err(Error::Input(format!("ground truth is zero at masked-in pixel {i}")));
    }
    let aligned = align(pred, gt, mask, mode)?;
    let mut terms = PixelTerms::default();
    let t1 = 1.25;
    let t2 = 1.25 * 1.25;
    for &i in &idx {
        let p = aligned.data()[i];
        let g = gt.data()[i];
        let diff = p - g;
        terms.rel.push(diff.abs() / g);
        terms.sq.push(diff * diff);
        if p > 0.0 {
            let ratio = (g / p).max(p / g);
            terms.within1 += usize::from(ratio < t1);
            terms.within2 += usize::from(ratio < t2);
        }
    }
    Ok(terms)
}

/// Metrics for one prediction/ground-truth pair.
pub fn eval_pair(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster, options: EvalOptions) -> Result<MetricReport> {
    Ok(pixel_terms(pred, gt, mask, options.mode)?.report(options.rmse, options.mode))
}

/// One item of a dataset evaluation.
pub struct EvalPair<'a> {
    pub pred: &'a ErpRaster,
    pub gt: &'a ErpRaster,
    pub mask: &'a ErpRaster,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DatasetReport {
    pub metrics: MetricReport,
    pub n_images: usize,
    pub n_failed: usize,
    pub aggregation: Aggregation,
    pub failures: Vec<PairFailure>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PairFailure {
    pub index: usize,
    pub reason: String,
}

/// Aggregates metrics over pairs; failing pairs are skipped and recorded.
pub fn eval_dataset<'a>(
    pairs: impl IntoIterator<Item = EvalPair<'a>>,
    options: EvalOptions,
    aggregation: Aggregation,
) -> Result<DatasetReport> {
    let mut failures = Vec::new();
    let mut per_image = Vec::new();
    let mut pooled = PixelTerms::default();
    let mut total = 0;
    for (index, pair) in pairs.into_iter().enumerate() {
        total += 1;
        match pixel_terms(pair.pred, pair.gt, pair.mask, options.mode) {
            Ok(terms) => match aggregation {
                Aggregation::PerImage => per_image.push(terms.report(options.rmse, options.mode)),
                Aggregation::Pooled => {
                    per_image.push(terms.report(options.rmse, options.mode));
                    pooled.extend(terms);
                }
            },
            Err(e) => {
                log::warn!("pair {index} skipped: {e}");
                failures.push(PairFailure {
                    index,
                    reason: e.to_string(),
                });
            }
        }
    }
    if total == 0 {
        return Err(Error::Input("dataset is empty".into()));
    }
    if per_image.is_empty() {
        return Err(Error::Input(format!("all {total} pairs failed")));
    }
    let metrics = match aggregation {
        Aggregation::Pooled => pooled.report(options.rmse, options.mode),
        Aggregation::PerImage => {
            let mean = |f: fn(&MetricReport) -> f64| {
                pairwise_mean(&per_image.iter().map(f).collect::<Vec<_>>()).expect("nonempty")
            };
            MetricReport {
                absrel: mean(|r| r.absrel),
                rmse: mean(|r| r.rmse),
                delta1: mean(|r| r.delta1),
                delta2: mean(|r| r.delta2),
                n_valid: per_image.iter().map(|r| r.n_valid).sum(),
                alignment: options.mode,
            }
        }
    };
    Ok(DatasetReport {
        metrics,
        n_images: per_image.len(),
        n_failed: failures.len(),
        aggregation,
        failures,
    })
}

/// Fixed-width text table with the columns `AbsRel↓ RMSE↓ δ1↑ δ2↑`.
pub fn format_table(rows: &[(&str, &MetricReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "Dataset", "AbsRel↓", "RMSE↓", "δ1↑", "δ2↑"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}\n",
            name, r.absrel, r.rmse, r.delta1, r.delta2
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ErpGrid;
    use crate::raster::RasterKind;

    fn raster(values: &[f64]) -> ErpRaster {
        let g = ErpGrid::new(values.len(), 1).unwrap();
        ErpRaster::new(g, RasterKind::Distance, 1, values.to_vec()).unwrap()
    }

    fn none() -> EvalOptions {
        EvalOptions {
            mode: AlignmentMode::None,
            rmse: RmseForm::Conventional,
        }
    }

    #[test]
    fn perfect_prediction() {
        let gt = raster(&[1.0, 2.0, 5.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let r = eval_pair(&gt, &gt, &m, EvalOptions::default()).unwrap();
        assert_eq!((r.absrel, r.rmse, r.delta1, r.delta2), (0.0, 0.0, 100.0, 100.0));
        assert_eq!(r.alignment, AlignmentMode::Median);
    }

    #[test]
    fn delta_threshold_is_strict() {
        let gt = raster(&[1.0, 2.0, 4.0, 8.0]);
        let pred = raster(&[1.25, 2.5, 5.0, 10.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let r = eval_pair(&pred, &gt, &m, none()).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 100.0);
    }

    #[test]
    fn hand_computed_example() {
        let gt = raster(&[1.0, 2.0, 3.0]);
        let pred = raster(&[1.0, 2.0, 4.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let r = eval_pair(&pred, &gt, &m, none()).unwrap();
        assert!((r.absrel - 100.0 / 9.0).abs() < 1e-12);
        assert!((r.delta1 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.delta2, 100.0);
        // sqrt(1/3) and sqrt(1)/3
        assert!((r.rmse - 100.0 * (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let printed = eval_pair(&pred, &gt, &m, EvalOptions { rmse: RmseForm::Printed, ..none() }).unwrap();
        assert!((printed.rmse - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gt_under_mask_is_an_error() {
        let gt = raster(&[1.0, 0.0]);
        let m = ErpRaster::full_mask(gt.grid());
        assert!(matches!(eval_pair(&gt, &gt, &m, none()), Err(Error::Input(_))));
        let empty = ErpRaster::zeros(gt.grid(), RasterKind::Mask);
        assert!(eval_pair(&gt, &gt, &empty, none()).is_err());
    }

    #[test]
    fn dataset_aggregation() {
        let gt = raster(&[1.0, 2.0, 3.0]);
        let pred = raster(&[1.0, 2.0, 4.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let single = eval_pair(&pred, &gt, &m, none()).unwrap();
        let one = eval_dataset([EvalPair { pred: &pred, gt: &gt, mask: &m }], none(), Aggregation::PerImage).unwrap();
        assert_eq!(one.metrics, single);
        let two = eval_dataset(
            [EvalPair { pred: &pred, gt: &gt, mask: &m }, EvalPair { pred: &pred, gt: &gt, mask: &m }],
            none(),
            Aggregation::PerImage,
        )
        .unwrap();
        assert_eq!(two.metrics.absrel, single.absrel);
        assert_eq!(two.metrics.delta1, single.delta1);

        // AbsRel 10% and 20%
        let g = raster(&[10.0, 10.0]);
        let p1 = raster(&[11.0, 11.0]);
        let p2 = raster(&[12.0, 12.0]);
        let m1 = ErpRaster::full_mask(g.grid());
        let r = eval_dataset(
            [EvalPair { pred: &p1, gt: &g, mask: &m1 }, EvalPair { pred: &p2, gt: &g, mask: &m1 }],
            none(),
            Aggregation::PerImage,
        )
        .unwrap();
        assert!((r.metrics.absrel - 15.0).abs() < 1e-12);
    }

    #[test]
    fn failing_pairs_are_counted() {
        let gt = raster(&[1.0, 2.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let empty = ErpRaster::zeros(gt.grid(), RasterKind::Mask);
        let r = eval_dataset(
            [EvalPair { pred: &gt, gt: &gt, mask: &m }, EvalPair { pred: &gt, gt: &gt, mask: &empty }],
            none(),
            Aggregation::PerImage,
        )
        .unwrap();
        assert_eq!((r.n_images, r.n_failed), (1, 1));
        assert_eq!(r.failures[0].index, 1);
        assert!(eval_dataset(std::iter::empty(), none(), Aggregation::PerImage).is_err());
    }

    #[test]
    fn pooled_aggregation_weights_by_pixels() {
        let g1 = raster(&[10.0, 10.0]);
        let p1 = raster(&[11.0, 11.0]);
        let g2 = raster(&[10.0; 6]);
        let p2 = raster(&[10.0; 6]);
        let m1 = ErpRaster::full_mask(g1.grid());
        let m2 = ErpRaster::full_mask(g2.grid());
        let r = eval_dataset(
            [EvalPair { pred: &p1, gt: &g1, mask: &m1 }, EvalPair { pred: &p2, gt: &g2, mask: &m2 }],
            none(),
            Aggregation::Pooled,
        )
        .unwrap();
        assert!((r.metrics.absrel - 2.5).abs() < 1e-12);
        assert_eq!(r.metrics.n_valid, 8);
    }

    #[test]
    fn table_has_all_columns() {
        let gt = raster(&[1.0, 2.0]);
        let m = ErpRaster::full_mask(gt.grid());
        let r = eval_pair(&gt, &gt, &m, none()).unwrap();
        let t = format_table(&[("synthetic", &r)]);
        assert!(t.contains("AbsRel↓") && t.contains("δ2↑"));
        assert!(t.lines().nth(1).unwrap().contains("100.00"));
    }
}
