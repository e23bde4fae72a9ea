//! Analytic-vs-central-difference gradient verification for the toy model.

use nalgebra::DMatrix;

use super::{SphereVit, SyntheticTask, ToyAttentionParams};
use crate::error::Result;
use crate::geometry::ErpGrid;
use crate::losses::{DistanceObjective, LossOptions, LossWeights};
use crate::raster::ErpRaster;

/// Scalar objective used for the check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradLoss {
    /// `½‖output‖²`.
    Quadratic,
    /// Median-aligned `λ_d L_dis + λ_n L_nor` against a target.
    Full(LossWeights),
}

/// Result for one parameter group.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupCheck {
    pub param_group: String,
    pub n_params: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Entries whose `θ ± ε` stencil crosses a kink of the median or an L1
    /// term, where central differences do not estimate the derivative.
    pub kink_crossings: usize,
    /// Relative error restricted to entries that stay on one smooth piece.
    pub smooth_rel_err: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_err: f64,
    pub smooth_rel_err: f64,
    pub kink_crossings: usize,
    pub eps: f64,
    pub tol: f64,
    pub loss: f64,
    pub pass: bool,
}

/// Loss value and parameter gradient of the model on `img`.
pub(crate) fn loss_and_grad(
    model: &SphereVit,
    img: &ErpRaster,
    loss: &LossKind<'_>,
) -> Result<(f64, ToyAttentionParams)> {
    let (out, tape) = model.forward_with_tape(img)?;
    let (value, grad_out, _) = loss.eval(&out)?;
    Ok((value, model.backward(&tape, &grad_out)))
}

pub(crate) enum LossKind<'a> {
    Quadratic,
    Objective(&'a DistanceObjective),
}

impl LossKind<'_> {
    fn eval(&self, out: &[f64]) -> Result<(f64, Vec<f64>, u64)> {
        match self {
            LossKind::Quadratic => Ok((0.5 * out.iter().map(|v| v * v).sum::<f64>(), out.to_vec(), 0)),
            LossKind::Objective(obj) => {
                let (l, g, branch) = obj.evaluate_with_branch(out)?;
                Ok((l.total, g, branch))
            }
        }
    }

    fn value(&self, model: &SphereVit, img: &ErpRaster) -> Result<(f64, u64)> {
        let (out, _) = model.forward_with_tape(img)?;
        let (v, _, branch) = self.eval(&out)?;
        Ok((v, branch))
    }
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter.
pub fn finite_difference_gradient(
    model: &mut SphereVit,
    mut f: impl FnMut(&SphereVit) -> Result<f64>,
    eps: f64,
) -> Result<ToyAttentionParams> {
    let (grad, _) = central_differences(model, |m| Ok((f(m)?, 0)), 0, eps)?;
    Ok(grad)
}

/// Central differences that also flag entries whose stencil leaves the
/// branch `base` reported by `f`.
fn central_differences(
    model: &mut SphereVit,
    mut f: impl FnMut(&SphereVit) -> Result<(f64, u64)>,
    base: u64,
    eps: f64,
) -> Result<(ToyAttentionParams, Vec<Vec<bool>>)> {
    let mut grad = model.params().zeros_like();
    let n_groups = grad.groups().len();
    let mut crossed = Vec::with_capacity(n_groups);
    for gi in 0..n_groups {
        let len = grad.groups()[gi].1.len();
        let mut flags = vec![false; len];
        for (k, flag) in flags.iter_mut().enumerate() {
            let orig = model.params_mut().groups_mut()[gi][k];
            model.params_mut().groups_mut()[gi][k] = orig + eps;
            let (fp, bp) = f(model)?;
            model.params_mut().groups_mut()[gi][k] = orig - eps;
            let (fm, bm) = f(model)?;
            model.params_mut().groups_mut()[gi][k] = orig;
            grad.groups_mut()[gi][k] = (fp - fm) / (2.0 * eps);
            *flag = bp != base || bm != base;
        }
        crossed.push(flags);
    }
    Ok((grad, crossed))
}

fn rel_err(diff: f64, a: f64, n: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / a.max(n).max(1e-12)
    }
}

fn compare(name: &str, analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, crossed: &[bool], tol: f64) -> GroupCheck {
    let mut check = GroupCheck {
        param_group: name.to_string(),
        n_params: analytic.len(),
        max_rel_err: f64::INFINITY,
        max_abs_err: f64::INFINITY,
        kink_crossings: crossed.iter().filter(|c| **c).count(),
        smooth_rel_err: f64::INFINITY,
        pass: false,
        failure: None,
    };
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        check.failure = Some(format!("non-finite analytic gradient in {name}[{i}]"));
        return check;
    }
    if let Some(i) = numeric.iter().position(|v| !v.is_finite()) {
        check.failure = Some(format!("non-finite numeric gradient in {name}[{i}]"));
        return check;
    }
    let diff = analytic - numeric;
    check.max_rel_err = rel_err(diff.norm(), analytic.norm(), numeric.norm());
    check.max_abs_err = diff.amax();
    let smooth = |m: &DMatrix<f64>| {
        m.iter()
            .zip(crossed)
            .filter(|(_, c)| !**c)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt()
    };
    check.smooth_rel_err = rel_err(smooth(&diff), smooth(analytic), smooth(numeric));
    check.pass = check.max_rel_err <= tol;
    check
}

/// Verifies the model's backward pass on the standard tiny problem: a 32×16
/// synthetic panorama of an off-center spherical room.
pub fn gradient_check(config: &super::ModelConfig, seed: u64, eps: f64, tol: f64, loss: GradLoss) -> Result<GradCheckReport> {
    let grid = ErpGrid::new(32, 16)?;
    let task = SyntheticTask::sphere_room(grid)?;
    let mut model = SphereVit::new(*config, grid, task.image.channels(), seed)?;
    let objective;
    let kind = match loss {
        GradLoss::Quadratic => LossKind::Quadratic,
        GradLoss::Full(weights) => {
            objective = DistanceObjective::new(&task.target, &task.mask, None, weights, LossOptions::default())?;
            LossKind::Objective(&objective)
        }
    };
    check_model(&mut model, &task.image, &kind, eps, tol)
}

pub(crate) fn check_model(
    model: &mut SphereVit,
    img: &ErpRaster,
    kind: &LossKind<'_>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (value, analytic) = loss_and_grad(model, img, kind)?;
    let (_, base) = kind.value(model, img)?;
    let (numeric, crossed) = central_differences(model, |m| kind.value(m, img), base, eps)?;
    let groups: Vec<GroupCheck> = analytic
        .groups()
        .into_iter()
        .zip(numeric.groups())
        .zip(&crossed)
        .map(|(((name, a), (_, n)), c)| compare(&name, a, n, c, tol))
        .collect();
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    let smooth_rel_err = groups.iter().map(|g| g.smooth_rel_err).fold(0.0, f64::max);
    let kink_crossings = groups.iter().map(|g| g.kink_crossings).sum();
    let pass = groups.iter().all(|g| g.pass);
    Ok(GradCheckReport {
        groups,
        max_rel_err,
        smooth_rel_err,
        kink_crossings,
        eps,
        tol,
        loss: value,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch: 8,
            dim: 8,
            key_dim: 4,
            linear_blocks: 1,
            cross_blocks: 1,
        }
    }

    #[test]
    fn quadratic_head_gradients_match() {
        let report = gradient_check(&tiny(), 0, 1e-4, 1e-6, GradLoss::Quadratic).unwrap();
        assert!(report.pass, "{report:#?}");
    }

    #[test]
    fn full_objective_matches_away_from_kinks() {
        let full = GradLoss::Full(LossWeights::default());
        let coarse = gradient_check(&ModelConfig::default(), 0, 1e-3, 1e-3, full).unwrap();
        assert!(coarse.smooth_rel_err < 1e-5, "{coarse:#?}");
        let fine = gradient_check(&ModelConfig::default(), 0, 1e-5, 1e-6, full).unwrap();
        assert!(fine.pass, "{fine:#?}");
        assert_eq!(fine.kink_crossings, 0);
    }

    #[test]
    fn prediction_equal_to_target_has_zero_gradient() {
        let grid = ErpGrid::new(32, 16).unwrap();
        let task = SyntheticTask::sphere_room(grid).unwrap();
        let model = SphereVit::new(tiny(), grid, 3, 4).unwrap();
        let own = model.forward(&task.image).unwrap();
        let mask = ErpRaster::full_mask(grid);
        let obj = DistanceObjective::new(&own, &mask, None, LossWeights::default(), LossOptions::default()).unwrap();
        let (value, grad) = loss_and_grad(&model, &task.image, &LossKind::Objective(&obj)).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.groups().iter().all(|(_, m)| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn non_finite_gradients_fail_with_group_name() {
        let a = DMatrix::from_element(1, 2, f64::NAN);
        let n = DMatrix::zeros(1, 2);
        let c = compare("head_b", &a, &n, &[false, false], 1e-3);
        assert!(!c.pass);
        assert!(c.failure.unwrap().contains("head_b"));
    }
}
