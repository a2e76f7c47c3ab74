use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Result};
use crate::num::Real;

/// Piecewise-constant learning rate: `(first_step, lr)` pairs in increasing step order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { steps: vec![(0, lr)] }
    }

    /// `low` until `switch`, then `high`.
    pub fn warmup(low: f64, high: f64, switch: usize) -> Self {
        Self {
            steps: vec![(0, low), (switch, high)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.first().map(|s| s.0) != Some(0) {
            return Err(invalid("lr schedule must start at step 0"));
        }
        if self.steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("lr schedule steps must be strictly increasing"));
        }
        if self.steps.iter().any(|s| !(s.1 > 0.0)) {
            return Err(invalid("learning rates must be > 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.steps.iter().take_while(|s| s.0 <= step).last().map_or(self.steps[0].1, |s| s.1)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::warmup(1e-4, 1e-3, 50)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            t: 0,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update using each tensor's accumulated gradient
/// (a missing gradient counts as zero). Moments are allocated on the first call.
pub fn adam_step<T: Real>(params: &mut [&mut Tensor<T>], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || params.iter().zip(&state.m).any(|(p, m)| p.len() != m.len()) {
        return Err(invalid("adam state does not match parameters"));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad: Vec<f64> = match p.grad() {
            Some(g) => g.iter().map(|x| x.wide()).collect(),
            None => vec![0.0; m.len()],
        };
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
            *x = T::of(x.wide() - step);
        }
    }
    Ok(())
}
