//! Bias-free 2D convolution.
//!
//! Kernels are square with side 1, 3, or 7; stride is 1 or 2; padding
//! is always half the kernel, so stride-1 convolutions preserve the
//! spatial extent. Weights are laid out `(out_c, in_c, kh, kw)`
//! row-major. 1x1 convolutions have a dedicated lowering to matrix
//! multiplication over the flattened spatial grid; its accumulation
//! order matches the direct loop, so both routes agree bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_nt, matmul_slices, matmul_tn, Shape, Tensor};

/// Static description of a convolution layer (weights live elsewhere).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel height and width; only square 1, 3, 7 are supported.
    pub kernel: (usize, usize),
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> ConvSpec {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride,
        }
    }

    /// Half-kernel padding on each side.
    pub fn padding(&self) -> (usize, usize) {
        (self.kernel.0 / 2, self.kernel.1 / 2)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output extent: `(H + 2 * pad - k) / stride + 1`, floored.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.padding();
        let (kh, kw) = self.kernel;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Resolution(format!(
                "input {h}x{w} too small for kernel {kh}x{kw}"
            )));
        }
        Ok((
            (h + 2 * ph - kh) / self.stride + 1,
            (w + 2 * pw - kw) / self.stride + 1,
        ))
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh != kw || !matches!(kh, 1 | 3 | 7) {
            return Err(Error::Unsupported(format!(
                "kernel {kh}x{kw}; square 1, 3, 7 supported"
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Unsupported(format!(
                "stride {}; 1 or 2 supported",
                self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidShape("conv needs positive channel counts".into()));
        }
        Ok(())
    }

    fn check_input<S: Scalar>(&self, x: &Tensor<S>, w: &[S]) -> Result<()> {
        self.validate()?;
        if x.shape().c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.shape().c
            )));
        }
        if w.len() != self.weight_len() {
            return Err(Error::DataLength {
                expected: self.weight_len(),
                got: w.len(),
            });
        }
        Ok(())
    }
}

/// Direct convolution. Out-of-bounds taps read as zero.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, spec: &ConvSpec, w: &[S]) -> Result<Tensor<S>> {
    spec.check_input(x, w)?;
    let s = x.shape();
    let (oh, ow) = spec.out_hw(s.h, s.w)?;
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let stride = spec.stride;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow))?;
    let x_data = x.data();
    let o_shape = out.shape();
    let out_data = out.data_mut();
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = S::zero();
                    for ic in 0..spec.in_channels {
                        let w_base = ((oc * spec.in_channels + ic) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as i64 - ph as i64;
                            if iy < 0 || iy >= s.h as i64 {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as i64 - pw as i64;
                                if ix < 0 || ix >= s.w as i64 {
                                    continue;
                                }
                                let xv = x_data[s.index(n, ic, iy as usize, ix as usize)];
                                acc = acc + xv * w[w_base + ky * kw + kx];
                            }
                        }
                    }
                    out_data[o_shape.index(n, oc, oy, ox)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to the input and the weights.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    spec: &ConvSpec,
    w: &[S],
    gy: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>)> {
    spec.check_input(x, w)?;
    let s = x.shape();
    let (oh, ow) = spec.out_hw(s.h, s.w)?;
    let g = gy.shape();
    if g.n != s.n || g.c != spec.out_channels || g.h != oh || g.w != ow {
        return Err(Error::ShapeMismatch(format!(
            "conv backward expects cotangent ({}, {}, {oh}, {ow}), got {g}",
            s.n, spec.out_channels
        )));
    }
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding();
    let stride = spec.stride;
    let mut gx = Tensor::zeros(s)?;
    let mut gw = vec![S::zero(); w.len()];
    let gx_data = gx.data_mut();
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = gy.get(n, oc, oy, ox);
                    if go == S::zero() {
                        continue;
                    }
                    for ic in 0..spec.in_channels {
                        let w_base = ((oc * spec.in_channels + ic) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as i64 - ph as i64;
                            if iy < 0 || iy >= s.h as i64 {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as i64 - pw as i64;
                                if ix < 0 || ix >= s.w as i64 {
                                    continue;
                                }
                                let xi = s.index(n, ic, iy as usize, ix as usize);
                                gw[w_base + ky * kw + kx] = gw[w_base + ky * kw + kx] + go * x.data()[xi];
                                gx_data[xi] = gx_data[xi] + go * w[w_base + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw))
}

/// 1x1 convolution lowered to a matrix product per batch item.
///
/// For stride 1 the input channel planes already form the right-hand
/// matrix `(in_c, h * w)` in place; stride 2 gathers the even-indexed
/// grid first. Equals [`conv2d`] on the same arguments bit for bit.
pub fn pointwise_conv<S: Scalar>(x: &Tensor<S>, spec: &ConvSpec, w: &[S]) -> Result<Tensor<S>> {
    if spec.kernel != (1, 1) {
        return Err(Error::Unsupported(format!(
            "pointwise lowering requires a 1x1 kernel, got {}x{}",
            spec.kernel.0, spec.kernel.1
        )));
    }
    spec.check_input(x, w)?;
    let s = x.shape();
    let (oh, ow) = spec.out_hw(s.h, s.w)?;
    let plane = oh * ow;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow))?;
    for n in 0..s.n {
        let gathered;
        let x_mat: &[S] = if spec.stride == 1 {
            let base = s.index(n, 0, 0, 0);
            &x.data()[base..base + s.c * plane]
        } else {
            gathered = gather_strided(x, n, spec.stride, oh, ow);
            &gathered
        };
        let out_base = out.shape().index(n, 0, 0, 0);
        matmul_slices(
            w,
            spec.out_channels,
            spec.in_channels,
            x_mat,
            plane,
            &mut out.data_mut()[out_base..out_base + spec.out_channels * plane],
        );
    }
    Ok(out)
}

/// Gradients of [`pointwise_conv`]. Uses the transposed matmuls, so
/// the backward pass shares the lowering that the forward used.
pub fn pointwise_conv_backward<S: Scalar>(
    x: &Tensor<S>,
    spec: &ConvSpec,
    w: &[S],
    gy: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>)> {
    if spec.kernel != (1, 1) {
        return Err(Error::Unsupported(
            "pointwise backward requires a 1x1 kernel".into(),
        ));
    }
    spec.check_input(x, w)?;
    let s = x.shape();
    let (oh, ow) = spec.out_hw(s.h, s.w)?;
    let g = gy.shape();
    if g.n != s.n || g.c != spec.out_channels || g.h != oh || g.w != ow {
        return Err(Error::ShapeMismatch(format!(
            "pointwise backward expects cotangent ({}, {}, {oh}, {ow}), got {g}",
            s.n, spec.out_channels
        )));
    }
    let plane = oh * ow;
    let mut gx = Tensor::zeros(s)?;
    let mut gw = vec![S::zero(); w.len()];
    let mut gw_n = vec![S::zero(); w.len()];
    let mut gx_mat = vec![S::zero(); spec.in_channels * plane];
    for n in 0..s.n {
        let gy_base = g.index(n, 0, 0, 0);
        let gy_mat = &gy.data()[gy_base..gy_base + spec.out_channels * plane];
        let x_gathered;
        let x_mat: &[S] = if spec.stride == 1 {
            let base = s.index(n, 0, 0, 0);
            &x.data()[base..base + s.c * plane]
        } else {
            x_gathered = gather_strided(x, n, spec.stride, oh, ow);
            &x_gathered
        };
        // dW += gy . x^T, treating both as (channels, plane) matrices.
        matmul_nt(gy_mat, spec.out_channels, plane, x_mat, spec.in_channels, &mut gw_n);
        for (acc, v) in gw.iter_mut().zip(&gw_n) {
            *acc = *acc + *v;
        }
        // dX = W^T . gy.
        matmul_tn(w, spec.out_channels, spec.in_channels, gy_mat, plane, &mut gx_mat);
        if spec.stride == 1 {
            let base = s.index(n, 0, 0, 0);
            gx.data_mut()[base..base + s.c * plane].copy_from_slice(&gx_mat);
        } else {
            scatter_strided(&mut gx, n, spec.stride, oh, ow, &gx_mat);
        }
    }
    Ok((gx, gw))
}

/// Collects the strided sample grid of batch item `n` into a dense
/// `(c, oh * ow)` matrix buffer.
fn gather_strided<S: Scalar>(x: &Tensor<S>, n: usize, stride: usize, oh: usize, ow: usize) -> Vec<S> {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(x.get(n, c, oy * stride, ox * stride));
            }
        }
    }
    out
}

fn scatter_strided<S: Scalar>(
    gx: &mut Tensor<S>,
    n: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    vals: &[S],
) {
    let s = gx.shape();
    let mut i = 0;
    for c in 0..s.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let idx = s.index(n, c, oy * stride, ox * stride);
                gx.data_mut()[idx] = vals[i];
                i += 1;
            }
        }
    }
}
