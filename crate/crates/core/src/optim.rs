//! Stochastic gradient descent with momentum and weight decay.
//!
//! The update, per parameter buffer:
//!
//! ```text
//! g <- grad + weight_decay * value   (decayed buffers only)
//! v <- momentum * v + g
//! value <- value - lr * v
//! ```
//!
//! Weight decay touches convolution and fully connected weights
//! only; batchnorm scales and offsets and the classifier bias are
//! exempt, the standard recipe for batch-normalized networks.

use crate::graph::ParamRegistry;
use crate::scalar::Scalar;

/// Hyperparameters that stay fixed across a run. The learning rate
/// is passed per step so schedules stay in the caller's hands.
#[derive(Clone, Copy, Debug)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> SgdConfig {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state: one velocity buffer per parameter buffer.
pub struct Sgd<S> {
    config: SgdConfig,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(params: &ParamRegistry<S>, config: SgdConfig) -> Sgd<S> {
        Sgd {
            config,
            velocity: params
                .entries()
                .iter()
                .map(|e| vec![S::zero(); e.value.len()])
                .collect(),
        }
    }

    /// Applies one update from the gradients currently accumulated in
    /// `params`. Gradients are left untouched; the caller zeroes them
    /// before the next backward pass.
    pub fn step(&mut self, params: &mut ParamRegistry<S>, lr: f64) {
        let momentum = S::from_f64_lossy(self.config.momentum);
        let lr = S::from_f64_lossy(lr);
        for (entry, velocity) in params.entries_mut().iter_mut().zip(&mut self.velocity) {
            let decay = if entry.kind.decayed() {
                S::from_f64_lossy(self.config.weight_decay)
            } else {
                S::zero()
            };
            for ((p, g), v) in entry
                .value
                .iter_mut()
                .zip(&entry.grad)
                .zip(velocity.iter_mut())
            {
                let g = *g + decay * *p;
                *v = momentum * *v + g;
                *p = *p - lr * *v;
            }
        }
    }
}

/// Step schedule: the rate drops by 10x every `step_epochs` epochs.
/// A step of zero keeps the rate constant.
pub fn step_lr(initial: f64, epoch: usize, step_epochs: usize) -> f64 {
    if step_epochs == 0 {
        return initial;
    }
    initial * 0.1f64.powi((epoch / step_epochs) as i32)
}
