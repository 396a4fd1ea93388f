//! Pooling layers: the fixed 3x3 stride-2 max pool used by the stem,
//! the 2x2 stride-2 average pool used for downsampling, and global
//! average pooling for the head.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Output extent of a pooling window: `(H + 2 * pad - k) / stride + 1`.
pub fn pool_out_hw(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    (
        (h + 2 * pad - k) / stride + 1,
        (w + 2 * pad - k) / stride + 1,
    )
}

/// 3x3 max pool, stride 2, padding 1. Padding positions never win:
/// the maximum ranges over in-bounds taps only. Returns the pooled
/// tensor and the flat index of each window's maximum for backward.
pub fn maxpool3x3s2<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let s = x.shape();
    if s.h + 2 < 3 || s.w + 2 < 3 {
        return Err(Error::Resolution(format!("input {}x{} too small to pool", s.h, s.w)));
    }
    let (oh, ow) = pool_out_hw(s.h, s.w, 3, 2, 1);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow))?;
    let mut argmax = vec![0usize; out.shape().len()];
    let o_shape = out.shape();
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(S, usize)> = None;
                    for ky in 0..3i64 {
                        let iy = (oy * 2) as i64 + ky - 1;
                        if iy < 0 || iy >= s.h as i64 {
                            continue;
                        }
                        for kx in 0..3i64 {
                            let ix = (ox * 2) as i64 + kx - 1;
                            if ix < 0 || ix >= s.w as i64 {
                                continue;
                            }
                            let idx = s.index(n, c, iy as usize, ix as usize);
                            let v = x.data()[idx];
                            // Ties keep the first position in scan order.
                            if best.is_none_or(|(b, _)| v > b) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("window always contains an in-bounds tap");
                    let oi = o_shape.index(n, c, oy, ox);
                    out.data_mut()[oi] = v;
                    argmax[oi] = idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output cotangent back to its window's maximum.
pub fn maxpool3x3s2_backward<S: Scalar>(
    input_shape: Shape,
    argmax: &[usize],
    gy: &Tensor<S>,
) -> Result<Tensor<S>> {
    if argmax.len() != gy.shape().len() {
        return Err(Error::DataLength {
            expected: gy.shape().len(),
            got: argmax.len(),
        });
    }
    let mut gx = Tensor::zeros(input_shape)?;
    let d = gx.data_mut();
    for (i, &src) in argmax.iter().enumerate() {
        d[src] = d[src] + gy.data()[i];
    }
    Ok(gx)
}

/// 2x2 average pool, stride 2, no padding. Odd extents are an error
/// rather than silently dropping a row or column.
pub fn avgpool2x2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Resolution(format!(
            "2x2 average pool needs even extents, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow))?;
    let o_shape = out.shape();
    let quarter = S::from_f64_lossy(0.25);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, xx) = (oy * 2, ox * 2);
                    let sum = x.get(n, c, y, xx)
                        + x.get(n, c, y, xx + 1)
                        + x.get(n, c, y + 1, xx)
                        + x.get(n, c, y + 1, xx + 1);
                    out.data_mut()[o_shape.index(n, c, oy, ox)] = sum * quarter;
                }
            }
        }
    }
    Ok(out)
}

/// Spreads each cotangent evenly over its 2x2 window.
pub fn avgpool2x2_backward<S: Scalar>(input_shape: Shape, gy: &Tensor<S>) -> Result<Tensor<S>> {
    let g = gy.shape();
    if input_shape.h != g.h * 2 || input_shape.w != g.w * 2 || input_shape.n != g.n || input_shape.c != g.c
    {
        return Err(Error::ShapeMismatch(format!(
            "average pool backward: input {input_shape} vs cotangent {g}"
        )));
    }
    let mut gx = Tensor::zeros(input_shape)?;
    let quarter = S::from_f64_lossy(0.25);
    for n in 0..g.n {
        for c in 0..g.c {
            for oy in 0..g.h {
                for ox in 0..g.w {
                    let v = gy.get(n, c, oy, ox) * quarter;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = input_shape.index(n, c, oy * 2 + dy, ox * 2 + dx);
                        gx.data_mut()[i] = v;
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Collapses each channel plane to its mean, yielding `(n, c, 1, 1)`.
pub fn global_avgpool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1))?;
    let plane = s.h * s.w;
    let o_shape = out.shape();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            let mut sum = 0.0;
            for &v in &x.data()[base..base + plane] {
                sum += v.as_f64();
            }
            out.data_mut()[o_shape.index(n, c, 0, 0)] = S::from_f64_lossy(sum / plane as f64);
        }
    }
    Ok(out)
}

/// Spreads each cotangent evenly over the whole plane.
pub fn global_avgpool_backward<S: Scalar>(input_shape: Shape, gy: &Tensor<S>) -> Result<Tensor<S>> {
    let g = gy.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.h != 1 || g.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "global pool backward: input {input_shape} vs cotangent {g}"
        )));
    }
    let mut gx = Tensor::zeros(input_shape)?;
    let plane = input_shape.h * input_shape.w;
    let k = S::from_f64_lossy(1.0 / plane as f64);
    for n in 0..g.n {
        for c in 0..g.c {
            let v = gy.get(n, c, 0, 0) * k;
            let base = input_shape.index(n, c, 0, 0);
            for i in base..base + plane {
                gx.data_mut()[i] = v;
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_formulas_hold_over_a_range() {
        for h in 2..=64usize {
            for w in 2..=64usize {
                let (oh, ow) = pool_out_hw(h, w, 3, 2, 1);
                assert_eq!(oh, (h - 1) / 2 + 1);
                assert_eq!(ow, (w - 1) / 2 + 1);
            }
        }
        // The stem chain: 224 -> conv/2 -> 112 -> pool/2 -> 56.
        assert_eq!(pool_out_hw(112, 112, 3, 2, 1), (56, 56));
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Tensor::from_vec(
            Shape::new(1, 1, 4, 4),
            vec![
                1.0f64, 2.0, 3.0, 4.0, //
                5.0, 6.0, 7.0, 8.0, //
                9.0, 10.0, 11.0, 12.0, //
                13.0, 14.0, 15.0, 16.0,
            ],
        )
        .unwrap();
        let (y, _) = maxpool3x3s2(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn maxpool_ignores_padding_for_all_negative_input() {
        let x = Tensor::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![-4.0f64, -3.0, -2.0, -1.0],
        )
        .unwrap();
        let (y, _) = maxpool3x3s2(&x).unwrap();
        // A zero border must not beat the in-bounds values.
        assert_eq!(y.data(), &[-1.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let shape = Shape::new(2, 3, 6, 6);
        let x = Tensor::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let (y, argmax) = maxpool3x3s2(&x).unwrap();
        let cot = Tensor::from_vec(
            y.shape(),
            (0..y.shape().len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let gx = maxpool3x3s2_backward(shape, &argmax, &cot).unwrap();
        // Finite differences: ties are measure-zero with random input.
        let h = 1e-6;
        let loss = |x: &Tensor<f64>| -> f64 {
            let (y, _) = maxpool3x3s2(x).unwrap();
            y.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        for i in (0..shape.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let a = gx.data()[i];
            assert!((a - num).abs() < 1e-6, "index {i}: analytic {a} numeric {num}");
        }
    }

    #[test]
    fn avgpool_small_example() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = avgpool2x2(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn avgpool_rejects_odd_extents() {
        let x: Tensor<f64> = Tensor::zeros(Shape::new(1, 1, 3, 4)).unwrap();
        assert!(avgpool2x2(&x).is_err());
        let x: Tensor<f64> = Tensor::zeros(Shape::new(1, 1, 4, 5)).unwrap();
        assert!(avgpool2x2(&x).is_err());
    }

    #[test]
    fn avgpool_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let shape = Shape::new(1, 2, 4, 4);
        let x = Tensor::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let y = avgpool2x2(&x).unwrap();
        let cot = Tensor::from_vec(
            y.shape(),
            (0..y.shape().len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let gx = avgpool2x2_backward(shape, &cot).unwrap();
        let h = 1e-6;
        let loss = |x: &Tensor<f64>| -> f64 {
            avgpool2x2(x)
                .unwrap()
                .data()
                .iter()
                .zip(cot.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        for i in 0..shape.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((gx.data()[i] - num).abs() < 1e-6);
        }
    }

    #[test]
    fn global_avgpool_of_constant_plane_is_the_constant() {
        let x = Tensor::filled(Shape::new(2, 3, 7, 7), 0.37f64).unwrap();
        let y = global_avgpool(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        for &v in y.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn global_avgpool_backward_is_uniform() {
        let shape = Shape::new(1, 2, 3, 3);
        let cot = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![9.0f64, -18.0]).unwrap();
        let gx = global_avgpool_backward(shape, &cot).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let want = if c == 0 { 1.0 } else { -2.0 };
                    assert_eq!(gx.get(0, c, y, x), want);
                }
            }
        }
    }
}
