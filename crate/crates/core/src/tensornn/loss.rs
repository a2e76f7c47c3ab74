use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::Real;
use crate::voxel::{Dims, OccupancyGrid};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of cells unknown in the partial map but known in the target.
    pub missing: f64,
    /// Weight of remaining cells occupied in the target.
    pub occupied: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            missing: 3.0,
            occupied: 3.0,
        }
    }
}

/// Per-cell loss weights laid out like the grids they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGrid {
    pub dims: Dims,
    pub weights: Vec<f64>,
}

impl WeightGrid {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Cases in order: target unknown → 0; missing from the partial map → `missing`;
/// occupied in the target → `occupied`; otherwise 1.
pub fn loss_weights<T: Real>(
    target: &OccupancyGrid<T>,
    partial: &OccupancyGrid<T>,
    w: &LossWeights,
    threshold: f64,
) -> Result<WeightGrid> {
    if !target.geometry().same_shape(partial.geometry()) {
        return Err(invalid("loss weights: target and partial differ in shape"));
    }
    let weights = target
        .raw()
        .iter()
        .zip(partial.raw())
        .map(|(&t, &p)| {
            let t = t.wide();
            if t < 0.0 {
                0.0
            } else if p.wide() < 0.0 {
                w.missing
            } else if t > threshold {
                w.occupied
            } else {
                1.0
            }
        })
        .collect();
    Ok(WeightGrid {
        dims: target.dims(),
        weights,
    })
}

fn check(n: usize, target: &[i8], weights: &[f64]) -> Result<f64> {
    if target.len() != n || weights.len() != n {
        return Err(invalid("weighted BCE: length mismatch"));
    }
    let mut total = 0.0;
    for (&y, &w) in target.iter().zip(weights) {
        if w < 0.0 {
            return Err(invalid("weighted BCE: negative weight"));
        }
        if w > 0.0 && y < 0 {
            return Err(invalid("weighted BCE: positive weight on an unknown target cell"));
        }
        total += w;
    }
    Ok(total)
}

/// Weighted binary cross-entropy normalized by the weight sum.
/// Returns the loss and its gradient with respect to the probabilities
/// (zero where the clamp is active).
pub fn weighted_bce<T: Real>(pred: &[T], target: &[i8], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let total = check(pred.len(), target, weights)?;
    let mut grad = vec![0.0; pred.len()];
    if total == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let raw = pred[i].wide();
        let p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = target[i] as f64;
        loss += w * -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        if raw > PROB_EPS && raw < 1.0 - PROB_EPS {
            grad[i] = w * (-y / p + (1.0 - y) / (1.0 - p)) / total;
        }
    }
    Ok((loss / total, grad))
}

/// Gradient of [`weighted_bce`] with respect to the pre-sigmoid logits: `w (p - y) / Σw`.
pub fn bce_logit_grad<T: Real>(pred: &[T], target: &[i8], weights: &[f64]) -> Result<Vec<f64>> {
    let total = check(pred.len(), target, weights)?;
    if total == 0.0 {
        return Ok(vec![0.0; pred.len()]);
    }
    Ok(pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((&p, &y), &w)| if w == 0.0 { 0.0 } else { w * (p.wide() - y as f64) / total })
        .collect())
}
