//! Fast Walsh-Hadamard transform in Hadamard (natural) order.
//!
//! The butterfly core touches each element with additions and subtractions
//! only. The orthonormal factor `(1/√2)^m` is folded into one multiply per
//! output element after all stages, so a scaled length-`N` transform costs
//! `N·log2 N` add/subtracts plus `N` multiplies. Inputs whose length is not
//! a power of two are zero-padded at the high-index end.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sizing for one transform axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformPlan {
    pub input_length: usize,
    pub padded_length: usize,
    /// `padded_length == 1 << log2_len`
    pub log2_len: u32,
    pub apply_scaling: bool,
}

impl TransformPlan {
    pub fn new(input_length: usize, apply_scaling: bool) -> Result<Self> {
        if input_length == 0 {
            return Err(Error::EmptyInput);
        }
        let padded_length = input_length.next_power_of_two();
        Ok(TransformPlan {
            input_length,
            padded_length,
            log2_len: padded_length.trailing_zeros(),
            apply_scaling,
        })
    }

    /// `(1/√2)^m`, or 1 when scaling is off.
    pub fn scale(&self) -> f64 {
        if self.apply_scaling {
            orthonormal_scale(self.log2_len)
        } else {
            1.0
        }
    }

    pub fn add_sub_ops(&self) -> u64 {
        self.padded_length as u64 * self.log2_len as u64
    }

    pub fn multiplies(&self) -> u64 {
        if self.apply_scaling {
            self.padded_length as u64
        } else {
            0
        }
    }
}

/// `(1/√2)^stages` evaluated without accumulating rounding from repeated
/// multiplication: even powers are exact powers of two.
pub fn orthonormal_scale(stages: u32) -> f64 {
    let halves = 0.5f64.powi((stages / 2) as i32);
    if stages % 2 == 1 {
        halves * FRAC_1_SQRT_2
    } else {
        halves
    }
}

pub fn pad_to_pow2<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    let plan = TransformPlan::new(x.len(), false)?;
    let mut out = Vec::with_capacity(plan.padded_length);
    out.extend_from_slice(x);
    out.resize(plan.padded_length, T::zero());
    Ok(out)
}

/// In-place unscaled butterfly. `data.len()` must be a power of two.
pub fn butterfly<T: Scalar>(data: &mut [T]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut half = 1;
    while half < n {
        for block in data.chunks_exact_mut(half * 2) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
}

pub fn fwht1d<T: Scalar>(x: &[T], apply_scaling: bool) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !x.len().is_power_of_two() {
        return Err(Error::NotPowerOfTwo(x.len()));
    }
    let plan = TransformPlan::new(x.len(), apply_scaling)?;
    let mut out = x.to_vec();
    butterfly(&mut out);
    if apply_scaling {
        let s = T::from_f64(plan.scale());
        out.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisOrder {
    RowsFirst,
    ColumnsFirst,
}

/// 2-D transform of an `H×W` tensor; output is `H'×W'` with each axis
/// padded to the next power of two.
pub fn fwht2d<T: Scalar>(img: &Tensor<T>, apply_scaling: bool) -> Result<Tensor<T>> {
    fwht2d_ordered(img, apply_scaling, AxisOrder::RowsFirst)
}

pub fn fwht2d_ordered<T: Scalar>(img: &Tensor<T>, apply_scaling: bool, order: AxisOrder) -> Result<Tensor<T>> {
    if img.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "fwht2d expects a 2-D tensor, got shape {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (out, hp, wp) = transform_plane(img.data(), h, w, apply_scaling, order)?;
    Tensor::from_vec(&[hp, wp], out)
}

/// Per-channel 2-D transform of a `C×H×W` tensor.
pub fn fwht_channels<T: Scalar>(img: &Tensor<T>, apply_scaling: bool) -> Result<Tensor<T>> {
    if img.rank() != 3 {
        return Err(Error::InvalidShape(format!(
            "fwht_channels expects C×H×W, got shape {:?}",
            img.shape()
        )));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if img.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::new();
    let (mut hp, mut wp) = (0, 0);
    for plane in img.data().chunks_exact(h * w).take(c) {
        let (t, ph, pw) = transform_plane(plane, h, w, apply_scaling, AxisOrder::RowsFirst)?;
        out.extend(t);
        (hp, wp) = (ph, pw);
    }
    Tensor::from_vec(&[c, hp, wp], out)
}

fn transform_plane<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    apply_scaling: bool,
    order: AxisOrder,
) -> Result<(Vec<T>, usize, usize)> {
    let rows = TransformPlan::new(h, apply_scaling)?;
    let cols = TransformPlan::new(w, apply_scaling)?;
    let (hp, wp) = (rows.padded_length, cols.padded_length);

    let mut buf = vec![T::zero(); hp * wp];
    for (r, src) in plane.chunks_exact(w).enumerate() {
        buf[r * wp..r * wp + w].copy_from_slice(src);
    }

    let row_pass = |buf: &mut [T]| {
        for row in buf.chunks_exact_mut(wp) {
            butterfly(row);
        }
    };
    let col_pass = |buf: &mut [T]| {
        let mut col = vec![T::zero(); hp];
        for c in 0..wp {
            for r in 0..hp {
                col[r] = buf[r * wp + c];
            }
            butterfly(&mut col);
            for r in 0..hp {
                buf[r * wp + c] = col[r];
            }
        }
    };
    match order {
        AxisOrder::RowsFirst => {
            row_pass(&mut buf);
            col_pass(&mut buf);
        }
        AxisOrder::ColumnsFirst => {
            col_pass(&mut buf);
            row_pass(&mut buf);
        }
    }

    if apply_scaling {
        let s = T::from_f64(orthonormal_scale(rows.log2_len + cols.log2_len));
        buf.iter_mut().for_each(|v| *v *= s);
    }
    Ok((buf, hp, wp))
}

/// Operation totals for one scaled or unscaled 2-D transform of an `h×w`
/// plane: `(add_subs, multiplies)`.
pub fn plane_op_counts(h: usize, w: usize, apply_scaling: bool) -> (u64, u64) {
    let hp = h.next_power_of_two() as u64;
    let wp = w.next_power_of_two() as u64;
    let adds = hp * wp * wp.trailing_zeros() as u64 + wp * hp * hp.trailing_zeros() as u64;
    let mults = if apply_scaling { hp * wp } else { 0 };
    (adds, mults)
}
