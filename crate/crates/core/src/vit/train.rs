//! Minimal full-batch SGD on a synthetic panorama.

use super::gradcheck::{loss_and_grad, LossKind};
use super::SphereVit;
use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, Vec3};
use crate::losses::{DistanceObjective, LossOptions, LossWeights};
use crate::raster::ErpRaster;
use crate::synthetic::{shaded_panorama, sphere_room};

/// Input image, target distance and mask.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub image: ErpRaster,
    pub target: ErpRaster,
    pub mask: ErpRaster,
}

impl SyntheticTask {
    /// Camera off-center inside a sphere of radius 2; the image is a smooth
    /// direction-dependent color field shaded by distance.
    pub fn sphere_room(grid: ErpGrid) -> Result<Self> {
        let target = sphere_room(grid, Vec3::new(0.6, -0.35, 0.45), 2.0)?;
        let image = shaded_panorama(&target)?;
        Ok(Self {
            image,
            mask: ErpRaster::full_mask(grid),
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainLog {
    /// Total loss before each step, plus the final loss.
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().expect("nonempty")
    }
}

/// Runs `steps` plain gradient-descent updates with a fixed learning rate.
pub fn train_sgd(
    model: &mut SphereVit,
    task: &SyntheticTask,
    weights: LossWeights,
    learning_rate: f64,
    steps: usize,
) -> Result<TrainLog> {
    let objective = DistanceObjective::new(&task.target, &task.mask, None, weights, LossOptions::default())?;
    let kind = LossKind::Objective(&objective);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grad) = loss_and_grad(model, &task.image, &kind)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Input(format!("training diverged at step {step}")));
        }
        losses.push(loss);
        model.params_mut().axpy(-learning_rate, &grad);
    }
    let (out, _) = model.forward_with_tape(&task.image)?;
    losses.push(objective.evaluate(&out)?.0.total);
    Ok(TrainLog { losses })
}
