//! SGD with momentum and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One SGD-momentum update, consuming the gradient stored on `param`:
///
/// ```text
/// g = grad + weight_decay * param
/// v = momentum * v + g
/// param -= lr * v
/// ```
pub fn sgd_momentum_step<T: Real>(
    param: &mut Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if velocity.shape() != param.shape() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!("velocity {:?} for param {:?}", velocity.shape(), param.shape()),
        ));
    }
    let grad = param.grad().ok_or(Error::MissingGrad)?.to_vec();
    let v = velocity.data_mut();
    let p = param.data_mut();
    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(grad) {
        let g = gi + weight_decay * *pi;
        *vi = momentum * *vi + g;
        *pi = *pi - lr * *vi;
    }
    param.clear_grad();
    Ok(())
}

/// Multiplies the base rate by `gamma` every `step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base_lr: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let steps = if self.step_size == 0 { 0 } else { epoch / self.step_size };
        self.base_lr * self.gamma.powi(steps as i32)
    }
}
