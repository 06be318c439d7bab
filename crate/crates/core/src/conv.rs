//! Convolution, ReLU and residual addition with their backward passes.
//!
//! Convolution uses cross-correlation semantics (no kernel flip) and is
//! lowered to a matrix product over an im2col buffer. The reduction index of
//! that product runs over `(in_channel, ky, kx)` in row-major order, so the
//! forward pass is a plain nested-loop convolution with a fixed summation
//! order, followed by the bias add.

use alloc::vec;
use alloc::vec::Vec;

use crate::gemm::{gemm_nn, gemm_nn_strided, gemm_nt};
use crate::{Error, Result, Scalar, Tensor};

const COL_BAND_ELEMS: usize = 1 << 16;

/// Kernel/stride/pad of a convolution.
///
/// Only 3×3 (pad 1) and 1×1 (pad 0) kernels with stride 1 or 2 occur in the
/// network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn conv3x3(stride: usize) -> Self {
        Self {
            kernel: 3,
            stride,
            pad: 1,
        }
    }

    pub const fn conv1x1() -> Self {
        Self {
            kernel: 1,
            stride: 1,
            pad: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = matches!(self.kernel, 1 | 3)
            && matches!(self.stride, 1 | 2)
            && self.pad == (self.kernel - 1) / 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGeometry {
                kernel: self.kernel,
                stride: self.stride,
                pad: self.pad,
            })
        }
    }

    /// `floor((input + 2·pad − kernel) / stride) + 1`, or `None` when the
    /// padded input is smaller than the kernel.
    pub fn output_dim(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        (padded >= self.kernel && input > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, k, k)`
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(geometry: ConvGeometry, weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        let k = geometry.kernel;
        let (out_channels, in_channels) = match *weights.shape() {
            [o, i, kh, kw] if kh == k && kw == k => (o, i),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv params",
                    expected: vec![0, 0, k, k],
                    got: weights.shape().to_vec(),
                })
            }
        };
        if bias.len() != out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv bias",
                expected: vec![out_channels],
                got: vec![bias.len()],
            });
        }
        Ok(Self {
            geometry,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn zeros(geometry: ConvGeometry, in_channels: usize, out_channels: usize) -> Self {
        let k = geometry.kernel;
        Self {
            geometry,
            in_channels,
            out_channels,
            weights: Tensor::zeros(&[out_channels, in_channels, k, k]),
            bias: vec![T::ZERO; out_channels],
        }
    }

    /// Weight plus bias count.
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            geometry: self.geometry,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
        }
    }

    fn reduction_len(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    fn output_dims(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (c, h, w) = input.chw()?;
        let dims = (self.geometry.output_dim(h), self.geometry.output_dim(w));
        match dims {
            (Some(oh), Some(ow)) if c == self.in_channels => Ok((h, w, oh, ow)),
            _ => Err(Error::ShapeMismatch {
                op: "conv2d input",
                expected: vec![self.in_channels, self.geometry.kernel, self.geometry.kernel],
                got: input.shape().to_vec(),
            }),
        }
    }
}

/// Gradients of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn is_pointwise(g: &ConvGeometry) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

/// Unfold `input` into a `(C·k·k) × (oh·ow)` matrix; padded taps are zero.
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let plane = oh * ow;
    let mut col = vec![T::ZERO; c * g.kernel * g.kernel * plane];
    im2col_columns(input, c, h, w, g, ow, 0, plane, &mut col);
    col
}

/// Columns `[p0, p0 + len)` of the unfolded matrix, written as a
/// `(C·k·k) × len` block. Every element of `col` is overwritten.
#[allow(clippy::too_many_arguments)]
fn im2col_columns<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
    ow: usize,
    p0: usize,
    len: usize,
    col: &mut [T],
) {
    let k = g.kernel;
    let p1 = p0 + len;
    for ci in 0..c {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[((ci * k + ky) * k + kx) * len..][..len];
                let (x_lo, x_hi) = valid_range(ow, w, g.stride, g.pad, kx);
                let mut p = p0;
                while p < p1 {
                    let oy = p / ow;
                    let row_end = ((oy + 1) * ow).min(p1);
                    let (ox0, ox1) = (p - oy * ow, row_end - oy * ow);
                    let drow = &mut dst[p - p0..row_end - p0];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::ZERO);
                    } else {
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let lo = x_lo.clamp(ox0, ox1);
                        let hi = x_hi.clamp(lo, ox1);
                        drow[..lo - ox0].fill(T::ZERO);
                        drow[hi - ox0..].fill(T::ZERO);
                        let valid = &mut drow[lo - ox0..hi - ox0];
                        if g.stride == 1 {
                            let ix = lo + kx - g.pad;
                            valid.copy_from_slice(&srow[ix..ix + (hi - lo)]);
                        } else {
                            for (d, ox) in valid.iter_mut().zip(lo..hi) {
                                *d = srow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    p = row_end;
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside `0..w`.
fn valid_range(ow: usize, w: usize, stride: usize, pad: usize, kx: usize) -> (usize, usize) {
    let mut lo = 0;
    while lo < ow && lo * stride + kx < pad {
        lo += 1;
    }
    let mut hi = ow;
    while hi > lo && (hi - 1) * stride + kx - pad >= w {
        hi -= 1;
    }
    (lo, hi)
}

/// Inverse of [`im2col`]: scatter-add columns back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let k = g.kernel;
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                let (x_lo, x_hi) = valid_range(ow, w, g.stride, g.pad, kx);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow + x_lo..oy * ow + x_hi];
                    if g.stride == 1 {
                        let ix = x_lo + kx - g.pad;
                        for (d, &s) in drow[ix..ix + srow.len()].iter_mut().zip(srow) {
                            *d += s;
                        }
                    } else {
                        for (&s, ox) in srow.iter().zip(x_lo..x_hi) {
                            drow[ox * g.stride + kx - g.pad] += s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (h, w, oh, ow) = p.output_dims(input)?;
    let plane = oh * ow;
    let kk = p.reduction_len();
    let mut out = vec![T::ZERO; p.out_channels * plane];
    if is_pointwise(&p.geometry) {
        gemm_nn(p.out_channels, kk, plane, p.weights.data(), input.data(), &mut out);
    } else {
        // Unfold a band of output columns at a time so the panel stays in cache.
        let band = (COL_BAND_ELEMS / kk / 16 * 16).max(16).min(plane);
        let mut col = vec![T::ZERO; kk * band];
        let mut p0 = 0;
        while p0 < plane {
            let len = band.min(plane - p0);
            let block = &mut col[..kk * len];
            im2col_columns(input.data(), p.in_channels, h, w, &p.geometry, ow, p0, len, block);
            gemm_nn_strided(
                p.out_channels,
                kk,
                len,
                p.weights.data(),
                block,
                len,
                &mut out[p0..],
                plane,
            );
            p0 += len;
        }
    }
    for (row, &b) in out.chunks_exact_mut(plane).zip(&p.bias) {
        for v in row {
            *v += b;
        }
    }
    let out = Tensor::from_vec(&[p.out_channels, oh, ow], out)?;
    debug_assert!(!input.all_finite() || !p.weights.all_finite() || out.all_finite());
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (weights, bias, grad_input) = conv2d_backward_impl(input, p, grad_out, true)?;
    Ok(ConvGrads {
        input: grad_input.expect("input gradient requested"),
        weights,
        bias,
    })
}

/// Backward pass that optionally skips the input gradient (first layer).
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Tensor<T>, Vec<T>, Option<Tensor<T>>)> {
    let (h, w, oh, ow) = p.output_dims(input)?;
    if grad_out.shape() != [p.out_channels, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv2d grad_out",
            expected: vec![p.out_channels, oh, ow],
            got: grad_out.shape().to_vec(),
        });
    }
    let plane = oh * ow;
    let kk = p.reduction_len();
    let g = grad_out.data();

    let bias = g
        .chunks_exact(plane)
        .map(|row| row.iter().fold(T::ZERO, |acc, &v| acc + v))
        .collect();

    let pointwise = is_pointwise(&p.geometry);
    let owned;
    let col: &[T] = if pointwise {
        input.data()
    } else {
        owned = im2col(input.data(), p.in_channels, h, w, &p.geometry, oh, ow);
        &owned
    };
    let mut gw = vec![T::ZERO; p.out_channels * kk];
    gemm_nt(p.out_channels, kk, plane, g, col, &mut gw);
    let weights = Tensor::from_vec(p.weights.shape(), gw)?;

    let grad_input = if want_input {
        let wt = transpose(p.weights.data(), p.out_channels, kk);
        let mut gcol = vec![T::ZERO; kk * plane];
        gemm_nn(kk, p.out_channels, plane, &wt, g, &mut gcol);
        let gin = if pointwise {
            gcol
        } else {
            let mut gin = vec![T::ZERO; p.in_channels * h * w];
            col2im(&gcol, p.in_channels, h, w, &p.geometry, oh, ow, &mut gin);
            gin
        };
        Some(Tensor::from_vec(&[p.in_channels, h, w], gin)?)
    } else {
        None
    };
    Ok((weights, bias, grad_input))
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

/// Passes `grad` where `x > 0`; the derivative at exactly zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_same_shape("relu backward", grad)?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { T::ZERO })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise `x + y`. The gradient reaches both addends unchanged.
pub fn residual_add<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = x.clone();
    out.add_assign(y)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_params(cin: usize, cout: usize, g: ConvGeometry) -> ConvParams {
        let k = g.kernel;
        ConvParams::new(
            g,
            Tensor::full(&[cout, cin, k, k], 1.0),
            vec![0.0; cout],
        )
        .unwrap()
    }

    #[test]
    fn pointwise_identity() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.0]).unwrap();
        let p = ones_params(1, 1, ConvGeometry::conv1x1());
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn all_ones_counts_taps() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &ones_params(1, 1, ConvGeometry::conv3x3(1))).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.at3(0, 1, 1), 9.0);
        assert_eq!(y.at3(0, 0, 0), 4.0);
        assert_eq!(y.at3(0, 0, 1), 6.0);
    }

    #[test]
    fn stride_two_halves_with_ceiling() {
        let g = ConvGeometry::conv3x3(2);
        assert_eq!(g.output_dim(640), Some(320));
        assert_eq!(g.output_dim(15), Some(8));
        assert_eq!(g.output_dim(1), Some(1));
        assert_eq!(ConvGeometry::conv1x1().output_dim(0), None);
    }

    #[test]
    fn geometry_rules() {
        assert!(ConvGeometry::conv3x3(2).validate().is_ok());
        let bad = ConvGeometry {
            kernel: 3,
            stride: 1,
            pad: 0,
        };
        assert!(bad.validate().is_err());
        let bad = ConvGeometry {
            kernel: 5,
            stride: 1,
            pad: 2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let p = ones_params(3, 1, ConvGeometry::conv3x3(1));
        assert!(matches!(
            conv2d_forward(&x, &p),
            Err(Error::ShapeMismatch { .. })
        ));
        let gout = Tensor::<f32>::zeros(&[1, 3, 3]);
        let x = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert!(conv2d_backward(&x, &p, &gout).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ones_params(1, 2, ConvGeometry::conv3x3(1));
        let g = conv2d_backward(&x, &p, &Tensor::zeros(&[2, 2, 2])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_identity_backward() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let gout = Tensor::from_vec(&[1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let p = ones_params(1, 1, ConvGeometry::conv1x1());
        let g = conv2d_backward(&x, &p, &gout).unwrap();
        assert_eq!(g.input, gout);
        assert_eq!(g.bias, vec![1.5]);
        assert_eq!(g.weights.data(), &[0.5 - 2.0 + 6.0]);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 5.0]);
        let zero = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        assert_eq!(relu_backward(&zero, &g).unwrap().data(), &[0.0]);
    }

    #[test]
    fn residual_cases() {
        let x = Tensor::from_vec(&[1, 1, 2], vec![1.5, -2.0]).unwrap();
        assert_eq!(residual_add(&x, &Tensor::zeros(&[1, 1, 2])).unwrap(), x);
        let neg = x.map(|v| -v);
        assert!(residual_add(&x, &neg)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(residual_add(&x, &Tensor::zeros(&[2])).is_err());
    }
}
