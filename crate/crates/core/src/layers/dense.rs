//! Fully connected classifier head and softmax cross-entropy loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Static description of the fully connected layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearSpec {
    pub fn weight_len(&self) -> usize {
        self.in_features * self.out_features
    }
}

fn check_linear<S: Scalar>(x: &Tensor<S>, spec: &LinearSpec, w: &[S], b: &[S]) -> Result<()> {
    let s = x.shape();
    if s.c != spec.in_features || s.h != 1 || s.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "linear expects ({}, {}, 1, 1) input, got {s}",
            s.n, spec.in_features
        )));
    }
    if w.len() != spec.weight_len() {
        return Err(Error::DataLength {
            expected: spec.weight_len(),
            got: w.len(),
        });
    }
    if b.len() != spec.out_features {
        return Err(Error::DataLength {
            expected: spec.out_features,
            got: b.len(),
        });
    }
    Ok(())
}

/// y = W x + b applied per batch item; weights are `(out, in)`
/// row-major. Input spatial extent must already be 1x1.
pub fn linear<S: Scalar>(
    x: &Tensor<S>,
    spec: &LinearSpec,
    w: &[S],
    b: &[S],
) -> Result<Tensor<S>> {
    check_linear(x, spec, w, b)?;
    let s = x.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_features, 1, 1))?;
    let o_shape = out.shape();
    for n in 0..s.n {
        let x_base = s.index(n, 0, 0, 0);
        let xv = &x.data()[x_base..x_base + spec.in_features];
        for o in 0..spec.out_features {
            let row = &w[o * spec.in_features..(o + 1) * spec.in_features];
            let mut acc = b[o];
            for (wv, vv) in row.iter().zip(xv) {
                acc = acc + *wv * *vv;
            }
            out.data_mut()[o_shape.index(n, o, 0, 0)] = acc;
        }
    }
    Ok(out)
}

/// Gradients of [`linear`] with respect to input, weights, bias.
pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    spec: &LinearSpec,
    w: &[S],
    gy: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let b_dummy = vec![S::zero(); spec.out_features];
    check_linear(x, spec, w, &b_dummy)?;
    let g = gy.shape();
    if g.n != x.shape().n || g.c != spec.out_features || g.h != 1 || g.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "linear backward expects ({}, {}, 1, 1) cotangent, got {g}",
            x.shape().n,
            spec.out_features
        )));
    }
    let s = x.shape();
    let mut gx = Tensor::zeros(s)?;
    let mut gw = vec![S::zero(); w.len()];
    let mut gb = vec![S::zero(); spec.out_features];
    let gx_data = gx.data_mut();
    for n in 0..s.n {
        let x_base = s.index(n, 0, 0, 0);
        for o in 0..spec.out_features {
            let go = gy.get(n, o, 0, 0);
            gb[o] = gb[o] + go;
            let w_row = &w[o * spec.in_features..(o + 1) * spec.in_features];
            for i in 0..spec.in_features {
                gw[o * spec.in_features + i] = gw[o * spec.in_features + i] + go * x.data()[x_base + i];
                gx_data[x_base + i] = gx_data[x_base + i] + go * w_row[i];
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Mean softmax cross-entropy over the batch.
///
/// Logits are `(n, classes, 1, 1)`. Each row is shifted by its
/// maximum before exponentiation; probabilities and the scalar loss
/// are accumulated in f64 regardless of the element width. Returns
/// the loss and the probabilities (needed for backward).
pub fn softmax_xent<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(f64, Tensor<S>)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects (n, classes, 1, 1) logits, got {s}"
        )));
    }
    if labels.len() != s.n {
        return Err(Error::DataLength {
            expected: s.n,
            got: labels.len(),
        });
    }
    let classes = s.c;
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    let mut probs = Tensor::zeros(s)?;
    let mut loss = 0.0f64;
    for n in 0..s.n {
        let base = s.index(n, 0, 0, 0);
        let row = &logits.data()[base..base + classes];
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let mut denom = 0.0f64;
        for v in row {
            denom += (v.as_f64() - max).exp();
        }
        let log_denom = denom.ln();
        for (c, v) in row.iter().enumerate() {
            let z = v.as_f64() - max;
            probs.data_mut()[base + c] = S::from_f64_lossy((z - log_denom).exp());
        }
        let zl = row[labels[n]].as_f64() - max;
        loss -= zl - log_denom;
    }
    Ok((loss / s.n as f64, probs))
}

/// d loss / d logits = (probs - onehot(labels)) / n.
pub fn softmax_xent_backward<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    let s = probs.shape();
    if labels.len() != s.n {
        return Err(Error::DataLength {
            expected: s.n,
            got: labels.len(),
        });
    }
    let inv_n = S::from_f64_lossy(1.0 / s.n as f64);
    let mut g = probs.scale(inv_n);
    let gd = g.data_mut();
    for (n, &l) in labels.iter().enumerate() {
        let i = s.index(n, l, 0, 0);
        gd[i] = gd[i] - inv_n;
    }
    Ok(g)
}
