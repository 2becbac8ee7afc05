//! Dense 2-D convolution (cross-correlation) via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output is `ceil(in / stride)`; zeros split evenly, extra on bottom/right.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn axis(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(Error::InvalidShape(format!(
                    "kernel {kernel} larger than input {input} with valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

impl ConvGeometry {
    pub fn new(in_chw: [usize; 3], kernel_hw: [usize; 2], stride: usize, padding: Padding) -> Result<Self> {
        let [in_channels, in_h, in_w] = in_chw;
        let [kernel_h, kernel_w] = kernel_hw;
        if stride == 0 {
            return Err(Error::InvalidShape("stride must be at least 1".into()));
        }
        if in_chw.contains(&0) || kernel_hw.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "zero-sized convolution: input {in_chw:?}, kernel {kernel_hw:?}"
            )));
        }
        let (out_h, pad_top) = axis(in_h, kernel_h, stride, padding)?;
        let (out_w, pad_left) = axis(in_w, kernel_w, stride, padding)?;
        Ok(ConvGeometry {
            in_channels,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Patch length `n = c·h·w`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Output range `[lo, hi)` along one axis whose taps at kernel offset
    /// `k` land inside the input.
    fn valid_range(out: usize, stride: usize, k: usize, pad: usize, input: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
        let hi = if input + pad > k {
            ((input + pad - k - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Unfolds one image into a `patch_len × positions` matrix.
    pub(crate) fn im2col<T: Scalar>(&self, img: &[T], col: &mut [T]) {
        let (p, s) = (self.positions(), self.stride);
        let mut rows = col.chunks_exact_mut(p);
        for plane in img.chunks_exact(self.in_h * self.in_w).take(self.in_channels) {
            for ki in 0..self.kernel_h {
                let (y0, y1) = Self::valid_range(self.out_h, s, ki, self.pad_top, self.in_h);
                for kj in 0..self.kernel_w {
                    let (x0, x1) = Self::valid_range(self.out_w, s, kj, self.pad_left, self.in_w);
                    let dst = rows.next().expect("col holds patch_len rows");
                    dst[..y0 * self.out_w].fill(T::zero());
                    dst[y1 * self.out_w..].fill(T::zero());
                    for oy in y0..y1 {
                        let iy = oy * s + ki - self.pad_top;
                        let src = &plane[iy * self.in_w..(iy + 1) * self.in_w];
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        line[..x0].fill(T::zero());
                        line[x1..].fill(T::zero());
                        let ix0 = x0 * s + kj - self.pad_left;
                        if s == 1 {
                            line[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                        } else {
                            for (v, &x) in line[x0..x1].iter_mut().zip(src[ix0..].iter().step_by(s)) {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `patch_len × positions` matrix back onto an image.
    pub(crate) fn col2im<T: Scalar>(&self, col: &[T], img: &mut [T]) {
        let (p, s) = (self.positions(), self.stride);
        let mut rows = col.chunks_exact(p);
        for plane in img.chunks_exact_mut(self.in_h * self.in_w).take(self.in_channels) {
            for ki in 0..self.kernel_h {
                let (y0, y1) = Self::valid_range(self.out_h, s, ki, self.pad_top, self.in_h);
                for kj in 0..self.kernel_w {
                    let (x0, x1) = Self::valid_range(self.out_w, s, kj, self.pad_left, self.in_w);
                    let src = rows.next().expect("col holds patch_len rows");
                    for oy in y0..y1 {
                        let iy = oy * s + ki - self.pad_top;
                        let dst = &mut plane[iy * self.in_w..(iy + 1) * self.in_w];
                        let line = &src[oy * self.out_w + x0..oy * self.out_w + x1];
                        let ix0 = x0 * s + kj - self.pad_left;
                        if s == 1 {
                            dst[ix0..ix0 + line.len()]
                                .iter_mut()
                                .zip(line)
                                .for_each(|(d, &g)| *d += g);
                        } else {
                            for (d, &g) in dst[ix0..].iter_mut().step_by(s).zip(line) {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Splits a rank-3 `C×H×W` or rank-4 `N×C×H×W` shape into `(N, [C, H, W])`.
pub(crate) fn batch_dims(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    match *shape {
        [c, h, w] => Ok((1, [c, h, w])),
        [n, c, h, w] => Ok((n, [c, h, w])),
        _ => Err(Error::InvalidShape(format!(
            "expected C×H×W or N×C×H×W input, got {shape:?}"
        ))),
    }
}

pub(crate) fn output_shape(input_shape: &[usize], out_channels: usize, g: &ConvGeometry) -> Vec<usize> {
    if input_shape.len() == 3 {
        vec![out_channels, g.out_h, g.out_w]
    } else {
        vec![input_shape[0], out_channels, g.out_h, g.out_w]
    }
}

/// Validates an input/filter pair and returns `(batch, out_channels, geometry)`.
pub(crate) fn plan<T>(
    input: &Tensor<T>,
    weight_shape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, chw) = batch_dims(input.shape())?;
    let [o, c, kh, kw] = match *weight_shape {
        [o, c, kh, kw] => [o, c, kh, kw],
        _ => {
            return Err(Error::InvalidShape(format!(
                "filter must be O×C×kh×kw, got {weight_shape:?}"
            )))
        }
    };
    if c != chw[0] {
        return Err(Error::InvalidShape(format!(
            "input {:?} has {} channels but filter {:?} expects {c}",
            input.shape(),
            chw[0],
            weight_shape
        )));
    }
    let g = ConvGeometry::new(chw, [kh, kw], stride, padding)?;
    Ok((n, o, g))
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, o, g) = plan(input, weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        b.expect_shape(&[o])?;
    }
    let (k, p) = (g.patch_len(), g.positions());
    let mut out = Tensor::zeros(&output_shape(input.shape(), o, &g));
    let mut col = vec![T::zero(); k * p];
    for (img, dst) in input
        .data()
        .chunks_exact(g.in_len())
        .zip(out.data_mut().chunks_exact_mut(o * p))
        .take(n)
    {
        g.im2col(img, &mut col);
        T::gemm(o, k, p, weight.data(), (k, 1), &col, (p, 1), dst, (p, 1), false);
        if let Some(b) = bias {
            for (row, &bv) in dst.chunks_exact_mut(p).zip(b.data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not request the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    /// Per-output-channel sum of the upstream gradient.
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (n, o, g) = plan(input, weight.shape(), stride, padding)?;
    grad_out.expect_shape(&output_shape(input.shape(), o, &g))?;
    let (k, p) = (g.patch_len(), g.positions());

    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[o]);
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];

    for i in 0..n {
        let img = &input.data()[i * g.in_len()..(i + 1) * g.in_len()];
        let gout = &grad_out.data()[i * o * p..(i + 1) * o * p];
        g.im2col(img, &mut col);
        // dW[o×k] += dY[o×p] · colᵀ[p×k]
        T::gemm(o, p, k, gout, (p, 1), &col, (1, p), grad_w.data_mut(), (k, 1), true);
        for (b, row) in grad_b.data_mut().iter_mut().zip(gout.chunks_exact(p)) {
            for &v in row {
                *b += v;
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            // dcol[k×p] = Wᵀ[k×o] · dY[o×p]
            T::gemm(k, o, p, weight.data(), (1, k), gout, (p, 1), &mut dcol, (p, 1), false);
            g.col2im(&dcol, &mut gi.data_mut()[i * g.in_len()..(i + 1) * g.in_len()]);
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}
