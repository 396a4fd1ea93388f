//! Finite-difference verification of the backward pass.
//!
//! The check probes the network as a black box: pick a fixed random
//! cotangent `r`, define the scalar loss `L = sum(forward(x) * r)`,
//! and compare the analytic gradient (one backward pass seeded with
//! `r`) against central differences of `L` at sampled coordinates of
//! every parameter buffer and of the input. Sampling is spread so
//! each buffer contributes at least one coordinate, which means every
//! layer's backward rule gets exercised no matter how its parameters
//! are sized.
//!
//! Everything runs in `f64`: with a step of 1e-5 the truncation error
//! of the central difference sits far below the acceptance threshold,
//! so a failure indicates a wrong derivative, not noise.
//!
//! The one caveat with finite differences on a network full of ReLUs
//! is nonsmooth coordinates: when a kink falls inside the probed
//! `±h` interval, the central difference measures the average slope
//! across the kink rather than the derivative, and no analytic
//! gradient could match it. Each coordinate is therefore measured at
//! both `h` and `h/2`; on a smooth stretch the two estimates agree to
//! roundoff, while a straddled kink leaves an order-one discrepancy.
//! Inconsistent coordinates are discarded and another coordinate of
//! the same buffer is probed instead. A wrong derivative cannot hide
//! behind this guard: the two numeric estimates agree with each
//! other at smooth coordinates no matter what the backward pass
//! claims, so the coordinate is kept and the mismatch reported.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Mode, Network};
use crate::netspec::{build, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// A check passes when the worst relative error stays below this.
    pub tolerance: f64,
    /// Total coordinate budget, spread evenly over the buffers.
    pub target_samples: usize,
    /// Seeds the cotangent and the coordinate choices.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> GradCheckOptions {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            target_samples: 120,
            seed: 0,
        }
    }
}

/// One probed coordinate.
#[derive(Clone, Debug)]
pub struct GradCheckSample {
    pub buffer: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub samples: Vec<GradCheckSample>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    /// The sample with the largest relative error.
    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Relative error with a floored denominator: coordinates whose true
/// gradient is tiny (dead ReLU paths) are held to an absolute
/// standard instead of an impossible relative one.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn dot(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Two central-difference estimates of the same coordinate may
/// disagree by at most this relative amount before the coordinate is
/// treated as straddling a kink. Smooth coordinates agree to ~1e-10;
/// straddled kinks disagree at the scale of the slope jump.
const KINK_REL_TOL: f64 = 1e-4;

/// Central difference of the loss along one coordinate of either a
/// parameter buffer or the input.
fn central(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    buffer: Option<usize>,
    index: usize,
    h: f64,
) -> Result<f64> {
    match buffer {
        None => {
            let mut probe = x.clone();
            let orig = probe.data()[index];
            probe.data_mut()[index] = orig + h;
            let up = dot(net.forward(&probe, Mode::Train)?.output(), r);
            probe.data_mut()[index] = orig - h;
            let down = dot(net.forward(&probe, Mode::Train)?.output(), r);
            Ok((up - down) / (2.0 * h))
        }
        Some(bi) => {
            let orig = net.params.get(bi).value[index];
            net.params.get_mut(bi).value[index] = orig + h;
            let up = dot(net.forward(x, Mode::Train)?.output(), r);
            net.params.get_mut(bi).value[index] = orig - h;
            let down = dot(net.forward(x, Mode::Train)?.output(), r);
            net.params.get_mut(bi).value[index] = orig;
            Ok((up - down) / (2.0 * h))
        }
    }
}

/// Checks `net`'s backward pass at `x`. The network's gradients and
/// batchnorm running statistics are clobbered in the process.
pub fn gradcheck(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Fixed cotangent defining the scalar loss.
    let out_shape = net.forward(x, Mode::Train)?.output().shape();
    let r = Tensor::from_vec(
        out_shape,
        (0..out_shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    // Analytic gradients for every buffer at the unperturbed point.
    net.zero_grads();
    let trace = net.forward(x, Mode::Train)?;
    let input_grad = net.backward(&trace, &r)?;
    let analytic: Vec<(String, Vec<f64>)> = net
        .params
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.grad.clone()))
        .chain(std::iter::once((
            "input".to_string(),
            input_grad.data().to_vec(),
        )))
        .collect();

    let buffers = analytic.len();
    let per_buffer = opts.target_samples.div_ceil(buffers).max(1);
    let h = opts.step;
    let mut samples = Vec::new();
    for (bi, (name, grads)) in analytic.iter().enumerate() {
        let buffer = (bi < buffers - 1).then_some(bi);
        let want = per_buffer.min(grads.len());
        // Extra candidates cover coordinates rejected by the kink
        // guard; they cost nothing unless rejections happen.
        let pool = (4 * want).min(grads.len());
        let picks = rand::seq::index::sample(&mut rng, grads.len(), pool);
        let mut accepted = 0;
        // The least-inconsistent rejected coordinate, kept so a
        // buffer unlucky enough to hit kinks everywhere still gets
        // checked rather than silently skipped.
        let mut fallback: Option<GradCheckSample> = None;
        let mut fallback_gap = f64::INFINITY;
        for index in picks {
            if accepted == want {
                break;
            }
            let full = central(net, x, &r, buffer, index, h)?;
            let half = central(net, x, &r, buffer, index, h / 2.0)?;
            let gap = (full - half).abs() / full.abs().max(half.abs()).max(1e-3);
            let a = grads[index];
            let sample = GradCheckSample {
                buffer: name.clone(),
                index,
                analytic: a,
                numeric: half,
                rel_err: rel_err(a, half),
            };
            if gap < KINK_REL_TOL {
                samples.push(sample);
                accepted += 1;
            } else if gap < fallback_gap {
                fallback_gap = gap;
                fallback = Some(sample);
            }
        }
        if accepted == 0 {
            if let Some(sample) = fallback {
                samples.push(sample);
            }
        }
    }
    let max_rel_err = samples.iter().map(|s| s.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        samples,
        max_rel_err,
        tolerance: opts.tolerance,
    })
}

/// Parameter ceiling for [`gradcheck_spec`]. Central differences cost
/// four forwards per coordinate; past this size the check stops being
/// interactive, and a subsampled check of a big network adds nothing
/// over a full check of a small one.
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;

/// Builds a network from `spec` and checks it on a random input of
/// the spec's declared shape with batch size 2.
pub fn gradcheck_spec(spec: &NetworkSpec, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    spec.validate()?;
    let total = spec.param_count();
    if total > GRADCHECK_MAX_PARAMS {
        return Err(Error::Unsupported(format!(
            "gradient checking is meant for small networks: {} has {total} parameters (limit {GRADCHECK_MAX_PARAMS})",
            spec.name
        )));
    }
    let mut net: Network<f64> = build(spec, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = crate::tensor::Shape::new(2, spec.input.channels, spec.input.height, spec.input.width);
    let x = Tensor::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    gradcheck(&mut net, &x, opts)
}
