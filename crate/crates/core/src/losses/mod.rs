//! Training losses: median-aligned L1 distance loss and L1 normal loss.

mod align;
mod normals;

pub use align::{
    affine_align, affine_fit, align, median_align, median_scale, valid_pixels, AffineFit, AlignmentMode,
};
pub use normals::{d2n_backward, d2n_forward, distance_to_normal, pixel_directions, D2nTape, NormalField};

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, Vec3};
use crate::numeric::pairwise_sum;
use crate::raster::ErpRaster;
use align::check_same_grid;

/// Residuals smaller than this get a zero L1 subgradient.
pub const L1_DEAD_ZONE: f64 = 1e-12;

/// Weights of the distance and normal terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_dis: f64,
    pub lambda_nor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dis: 1.0,
            lambda_nor: 2.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_dis: f64, lambda_nor: f64) -> Result<Self> {
        if !(lambda_dis >= 0.0 && lambda_nor >= 0.0) {
            return Err(Error::domain("lambda", "loss weights must be nonnegative"));
        }
        if lambda_dis == 0.0 && lambda_nor == 0.0 {
            return Err(Error::domain("lambda", "loss weights cannot both be zero"));
        }
        Ok(Self { lambda_dis, lambda_nor })
    }

    pub fn combine(&self, dis: f64, nor: f64) -> f64 {
        self.lambda_dis * dis + self.lambda_nor * nor
    }
}

/// Extra switches for [`DistanceObjective`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    /// Weight each pixel by the cosine of its latitude instead of a plain mean.
    pub latitude_weighting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dis: f64,
    pub nor: f64,
}

fn l1_sign(r: f64) -> f64 {
    if r.abs() < L1_DEAD_ZONE {
        0.0
    } else {
        r.signum()
    }
}

/// `(1/|Ω|) Σ |pred − gt|` over Ω (mask set, gt valid, pred finite).
pub fn loss_dis(pred_aligned: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster) -> Result<f64> {
    let idx = valid_pixels(pred_aligned, gt, mask)?;
    if idx.is_empty() {
        return Err(Error::Input("distance loss over an empty valid set".into()));
    }
    let terms: Vec<f64> = idx.iter().map(|&i| (pred_aligned.data()[i] - gt.data()[i]).abs()).collect();
    Ok(pairwise_sum(&terms) / idx.len() as f64)
}

/// Mean over pixels valid in both normal rasters (and the mask) of the L1
/// norm of the normal difference.
pub fn loss_nor(pred_normals: &ErpRaster, gt_normals: &ErpRaster, mask: &ErpRaster) -> Result<f64> {
    check_same_grid(pred_normals, gt_normals)?;
    check_same_grid(pred_normals, mask)?;
    if pred_normals.channels() != 3 || gt_normals.channels() != 3 {
        return Err(Error::Config("normal rasters need 3 channels".into()));
    }
    let terms: Vec<f64> = (0..mask.grid().pixel_count())
        .filter(|&i| mask.is_valid_at(i) && pred_normals.is_valid_at(i) && gt_normals.is_valid_at(i))
        .map(|i| {
            let a = &pred_normals.data()[3 * i..3 * i + 3];
            let b = &gt_normals.data()[3 * i..3 * i + 3];
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::Input("normal loss over an empty valid set".into()));
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// `λ_d L_dis + λ_n L_nor` for a raw prediction, with ground-truth normals
/// derived by D2N.
pub fn total_loss(pred: &ErpRaster, gt: &ErpRaster, mask: &ErpRaster, weights: LossWeights) -> Result<LossBreakdown> {
    let objective = DistanceObjective::new(gt, mask, None, weights, LossOptions::default())?;
    check_same_grid(pred, gt)?;
    Ok(objective.evaluate(pred.data())?.0)
}

/// Like [`total_loss`] but with dataset-provided ground-truth normals.
pub fn total_loss_with_normals(
    pred: &ErpRaster,
    gt: &ErpRaster,
    mask: &ErpRaster,
    gt_normals: &ErpRaster,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let objective = DistanceObjective::new(gt, mask, Some(gt_normals), weights, LossOptions::default())?;
    check_same_grid(pred, gt)?;
    Ok(objective.evaluate(pred.data())?.0)
}

/// The full training objective with its gradient.
///
/// Holds everything that depends only on the target, so repeated evaluation
/// (training, finite differences) only redoes the prediction side.
#[derive(Debug, Clone)]
pub struct DistanceObjective {
    grid: ErpGrid,
    gt: Vec<f64>,
    base_valid: Vec<bool>,
    gt_normals: NormalField,
    dirs: Vec<Vec3>,
    pixel_weights: Vec<f64>,
    weights: LossWeights,
}

impl DistanceObjective {
    pub fn new(
        gt: &ErpRaster,
        mask: &ErpRaster,
        gt_normals: Option<&ErpRaster>,
        weights: LossWeights,
        options: LossOptions,
    ) -> Result<Self> {
        check_same_grid(gt, mask)?;
        if gt.channels() != 1 {
            return Err(Error::Config("ground truth must be a distance raster".into()));
        }
        let grid = gt.grid();
        let n = grid.pixel_count();
        let base_valid: Vec<bool> = (0..n).map(|i| mask.is_valid_at(i) && gt.is_valid_at(i)).collect();
        let dirs = pixel_directions(&grid);
        let gt_normals = match gt_normals {
            Some(raster) => {
                check_same_grid(gt, raster)?;
                if raster.channels() != 3 {
                    return Err(Error::Config("normal rasters need 3 channels".into()));
                }
                let normals = raster.data().chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
                let valid = (0..n).map(|i| base_valid[i] && raster.is_valid_at(i)).collect();
                NormalField { normals, valid }
            }
            None => d2n_forward(&grid, &dirs, gt.data(), &base_valid).0,
        };
        let pixel_weights = (0..n)
            .map(|i| {
                if options.latitude_weighting {
                    grid.pixel_center_angles(i % grid.width_px(), i / grid.width_px()).polar_rad().sin()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            grid,
            gt: gt.data().to_vec(),
            base_valid,
            gt_normals,
            dirs,
            pixel_weights,
            weights,
        })
    }

    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    /// Loss terms and `∂L/∂pred` for a raw (unaligned) prediction.
    pub fn evaluate(&self, pred: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        self.evaluate_with_branch(pred).map(|(l, g, _)| (l, g))
    }

    /// Like [`evaluate`](Self::evaluate), plus a key identifying the smooth
    /// piece of the objective that `pred` lies on: which pixels define the
    /// median and the sign of every L1 residual. Two predictions with the same
    /// key are joined by no kink of the median or the absolute values.
    pub fn evaluate_with_branch(&self, pred: &[f64]) -> Result<(LossBreakdown, Vec<f64>, u64)> {
        let n = self.grid.pixel_count();
        if pred.len() != n {
            return Err(Error::Config(format!("prediction has {} pixels, expected {n}", pred.len())));
        }
        let omega: Vec<usize> = (0..n).filter(|&i| self.base_valid[i] && pred[i].is_finite()).collect();
        if omega.is_empty() {
            return Err(Error::Input("loss over an empty valid set".into()));
        }

        // median alignment; remember which entries define the prediction median
        let mut order = omega.clone();
        order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(a.cmp(&b)));
        let m = order.len();
        let median_taps: Vec<(usize, f64)> = if m % 2 == 1 {
            vec![(order[m / 2], 1.0)]
        } else {
            vec![(order[m / 2 - 1], 0.5), (order[m / 2], 0.5)]
        };
        let pred_median: f64 = median_taps.iter().map(|&(i, w)| w * pred[i]).sum();
        let gt_vals: Vec<f64> = omega.iter().map(|&i| self.gt[i]).collect();
        let gt_median = crate::numeric::median(&gt_vals).expect("nonempty");
        if pred_median.is_nan() || pred_median <= 0.0 {
            return Err(Error::Alignment(format!("prediction median {pred_median} is not positive")));
        }
        let scale = gt_median / pred_median;
        let aligned: Vec<f64> = pred.iter().map(|v| v * scale).collect();

        let mut grad_aligned = vec![0.0; n];
        let mut branch = BranchKey::default();
        for &(i, _) in &median_taps {
            branch.push(i as u64);
        }

        // distance term
        let w_sum = pairwise_sum(&omega.iter().map(|&i| self.pixel_weights[i]).collect::<Vec<_>>());
        let dis_terms: Vec<f64> = omega
            .iter()
            .map(|&i| self.pixel_weights[i] * (aligned[i] - self.gt[i]).abs())
            .collect();
        let dis = pairwise_sum(&dis_terms) / w_sum;
        for &i in &omega {
            let sign = l1_sign(aligned[i] - self.gt[i]);
            branch.push_sign(sign);
            grad_aligned[i] += self.weights.lambda_dis * self.pixel_weights[i] * sign / w_sum;
        }

        // normal term
        let mut nor = 0.0;
        if self.weights.lambda_nor != 0.0 {
            let mut valid_in = vec![false; n];
            for &i in &omega {
                valid_in[i] = true;
            }
            let (field, tape) = d2n_forward(&self.grid, &self.dirs, &aligned, &valid_in);
            let omega_n: Vec<usize> = (0..n).filter(|&i| field.valid[i] && self.gt_normals.valid[i]).collect();
            if !omega_n.is_empty() {
                let wn_sum = pairwise_sum(&omega_n.iter().map(|&i| self.pixel_weights[i]).collect::<Vec<_>>());
                let nor_terms: Vec<f64> = omega_n
                    .iter()
                    .map(|&i| self.pixel_weights[i] * (field.normals[i] - self.gt_normals.normals[i]).abs().sum())
                    .collect();
                nor = pairwise_sum(&nor_terms) / wn_sum;
                let mut grad_normals = vec![Vec3::zeros(); n];
                for &i in &omega_n {
                    let diff = field.normals[i] - self.gt_normals.normals[i];
                    let k = self.weights.lambda_nor * self.pixel_weights[i] / wn_sum;
                    let signs = diff.map(l1_sign);
                    signs.iter().for_each(|s| branch.push_sign(*s));
                    grad_normals[i] = signs * k;
                }
                for (g, d) in grad_aligned.iter_mut().zip(d2n_backward(&tape, &grad_normals)) {
                    *g += d;
                }
            }
        }

        // back through aligned = pred · gt_median / pred_median
        let dot: f64 = grad_aligned.iter().zip(pred).map(|(g, p)| g * p).sum();
        let mut grad: Vec<f64> = grad_aligned.iter().map(|g| g * scale).collect();
        let dscale = -scale / pred_median;
        for (i, w) in median_taps {
            grad[i] += dot * dscale * w;
        }

        let total = self.weights.combine(dis, nor);
        Ok((LossBreakdown { total, dis, nor }, grad, branch.0))
    }
}

/// FNV-1a over the branch decisions.
struct BranchKey(u64);

impl Default for BranchKey {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl BranchKey {
    fn push(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn push_sign(&mut self, s: f64) {
        self.push(if s > 0.0 { 2 } else if s < 0.0 { 0 } else { 1 });
    }
}
