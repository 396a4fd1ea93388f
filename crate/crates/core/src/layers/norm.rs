//! Batch normalization over `(n, h, w)` per channel.
//!
//! Train mode normalizes by the batch statistics and folds them into
//! the running estimates with momentum 0.1 (running var uses the
//! unbiased batch variance, normalization the biased one). Eval mode
//! normalizes by the running estimates, which initialize to mean 0
//! and variance 1, so an untrained layer in eval mode is usable
//! rather than an error.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Static description of a batchnorm layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormSpec {
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> BatchNormSpec {
        BatchNormSpec {
            channels,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Values saved by the training forward pass for backward.
#[derive(Clone, Debug)]
pub struct BnCache<S> {
    /// Normalized input, same layout as the activation.
    pub xhat: Vec<S>,
    /// Per-channel 1 / sqrt(var + eps).
    pub inv_std: Vec<S>,
}

fn check_params<S: Scalar>(spec: &BatchNormSpec, x: &Tensor<S>, bufs: &[&[S]]) -> Result<()> {
    if x.shape().c != spec.channels {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm covers {} channels but input has {}",
            spec.channels,
            x.shape().c
        )));
    }
    for b in bufs {
        if b.len() != spec.channels {
            return Err(Error::DataLength {
                expected: spec.channels,
                got: b.len(),
            });
        }
    }
    Ok(())
}

/// Training forward: normalizes by batch statistics and updates the
/// running estimates in place.
pub fn batchnorm_train<S: Scalar>(
    x: &Tensor<S>,
    spec: &BatchNormSpec,
    gamma: &[S],
    beta: &[S],
    running_mean: &mut [S],
    running_var: &mut [S],
) -> Result<(Tensor<S>, BnCache<S>)> {
    check_params(spec, x, &[gamma, beta, running_mean, running_var])?;
    let s = x.shape();
    let m = (s.n * s.h * s.w) as f64;
    let plane = s.h * s.w;
    let mut out = Tensor::zeros(s)?;
    let mut xhat = vec![S::zero(); x.data().len()];
    let mut inv_std = vec![S::zero(); spec.channels];
    for c in 0..spec.channels {
        // Statistics accumulate in f64 for both element widths; the
        // result is cast once, keeping train and check paths aligned.
        let mut sum = 0.0;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for &v in &x.data()[base..base + plane] {
                sum += v.as_f64();
            }
        }
        let mean = sum / m;
        let mut var_sum = 0.0;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for &v in &x.data()[base..base + plane] {
                let d = v.as_f64() - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / m;
        let istd = 1.0 / (var + spec.epsilon).sqrt();
        inv_std[c] = S::from_f64_lossy(istd);
        let mean_s = S::from_f64_lossy(mean);
        let istd_s = inv_std[c];
        let (g, b) = (gamma[c], beta[c]);
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                let xh = (x.data()[i] - mean_s) * istd_s;
                xhat[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
        // Momentum update; the running variance uses the unbiased
        // estimate when more than one value contributed.
        let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
        let mom = spec.momentum;
        running_mean[c] = S::from_f64_lossy((1.0 - mom) * running_mean[c].as_f64() + mom * mean);
        running_var[c] = S::from_f64_lossy((1.0 - mom) * running_var[c].as_f64() + mom * unbiased);
    }
    Ok((out, BnCache { xhat, inv_std }))
}

/// Eval forward: normalizes by the running estimates.
pub fn batchnorm_eval<S: Scalar>(
    x: &Tensor<S>,
    spec: &BatchNormSpec,
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
) -> Result<Tensor<S>> {
    check_params(spec, x, &[gamma, beta, running_mean, running_var])?;
    let s = x.shape();
    let plane = s.h * s.w;
    let mut out = Tensor::zeros(s)?;
    for c in 0..spec.channels {
        let istd = S::from_f64_lossy(1.0 / (running_var[c].as_f64() + spec.epsilon).sqrt());
        let mean = running_mean[c];
        let (g, b) = (gamma[c], beta[c]);
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                out.data_mut()[i] = g * (x.data()[i] - mean) * istd + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of the training forward with respect to the input,
/// gamma, and beta.
pub fn batchnorm_backward<S: Scalar>(
    spec: &BatchNormSpec,
    cache: &BnCache<S>,
    gamma: &[S],
    gy: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    check_params(spec, gy, &[gamma])?;
    if cache.xhat.len() != gy.data().len() {
        return Err(Error::DataLength {
            expected: gy.data().len(),
            got: cache.xhat.len(),
        });
    }
    let s = gy.shape();
    let m = (s.n * s.h * s.w) as f64;
    let plane = s.h * s.w;
    let mut gx = Tensor::zeros(s)?;
    let mut dgamma = vec![S::zero(); spec.channels];
    let mut dbeta = vec![S::zero(); spec.channels];
    for c in 0..spec.channels {
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                let g = gy.data()[i].as_f64();
                sum_gy += g;
                sum_gy_xhat += g * cache.xhat[i].as_f64();
            }
        }
        dgamma[c] = S::from_f64_lossy(sum_gy_xhat);
        dbeta[c] = S::from_f64_lossy(sum_gy);
        // dx = istd / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)),
        // with dxhat = gy * gamma. The sums distribute over gamma.
        let g_c = gamma[c].as_f64();
        let istd = cache.inv_std[c].as_f64();
        let k1 = g_c * sum_gy / m;
        let k2 = g_c * sum_gy_xhat / m;
        for n in 0..s.n {
            let base = s.index(n, c, 0, 0);
            for i in base..base + plane {
                let dxhat = gy.data()[i].as_f64() * g_c;
                let xh = cache.xhat[i].as_f64();
                gx.data_mut()[i] = S::from_f64_lossy(istd * (dxhat - k1 - xh * k2));
            }
        }
    }
    Ok((gx, dgamma, dbeta))
}
