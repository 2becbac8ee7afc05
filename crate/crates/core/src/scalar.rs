//! Element types the kernels are generic over.
//!
//! Training runs in `f32`; gradient checks and oracles run in `f64`. Both
//! dispatch matrix products to `matrixmultiply`. Any other implementor (the
//! operation-counting scalar in [`crate::instrument`]) falls back to the
//! naive triple loop in [`Scalar::gemm`], which performs exactly `k`
//! multiplies and `k - 1` additions per output element.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// On-disk element tag used by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn exp(self) -> Self {
        Self::from_f64(self.to_f64().exp())
    }

    fn ln(self) -> Self {
        Self::from_f64(self.to_f64().ln())
    }

    fn sqrt(self) -> Self {
        Self::from_f64(self.to_f64().sqrt())
    }

    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }

    /// `C = A·B` (or `C += A·B` when `accumulate`), all operands strided.
    ///
    /// `A` is `m×k`, `B` is `k×n`, `C` is `m×n`. Strides are in elements and
    /// must be non-negative.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        c: &mut [Self],
        (rsc, csc): (usize, usize),
        accumulate: bool,
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        for i in 0..m {
            for j in 0..n {
                let acc = if k == 0 {
                    Self::zero()
                } else {
                    let mut acc = a[i * rsa] * b[j * csb];
                    for p in 1..k {
                        acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                    }
                    acc
                };
                let dst = &mut c[i * rsc + j * csc];
                *dst = if accumulate { *dst + acc } else { acc };
            }
        }
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "gemm operand of {rows}x{cols} overruns buffer of {len}");
}

macro_rules! impl_float_scalar {
    ($ty:ty, $dtype:expr, $kernel:path) => {
        impl Scalar for $ty {
            const DTYPE: DType = $dtype;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn zero() -> Self {
                0.0
            }

            #[inline]
            fn one() -> Self {
                1.0
            }

            #[inline]
            fn exp(self) -> Self {
                <$ty>::exp(self)
            }

            #[inline]
            fn ln(self) -> Self {
                <$ty>::ln(self)
            }

            #[inline]
            fn sqrt(self) -> Self {
                <$ty>::sqrt(self)
            }

            #[inline]
            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                c: &mut [Self],
                (rsc, csc): (usize, usize),
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(c.len(), m, n, rsc, csc);
                if k == 0 {
                    if !accumulate {
                        for i in 0..m {
                            for j in 0..n {
                                c[i * rsc + j * csc] = 0.0;
                            }
                        }
                    }
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_float_scalar!(f32, DType::F32, matrixmultiply::sgemm);
impl_float_scalar!(f64, DType::F64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    /// Wrapper forcing the generic naive gemm path.
    #[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
    struct Plain(f64);

    impl Add for Plain {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            Plain(self.0 + o.0)
        }
    }
    impl Sub for Plain {
        type Output = Self;
        fn sub(self, o: Self) -> Self {
            Plain(self.0 - o.0)
        }
    }
    impl Mul for Plain {
        type Output = Self;
        fn mul(self, o: Self) -> Self {
            Plain(self.0 * o.0)
        }
    }
    impl Div for Plain {
        type Output = Self;
        fn div(self, o: Self) -> Self {
            Plain(self.0 / o.0)
        }
    }
    impl Neg for Plain {
        type Output = Self;
        fn neg(self) -> Self {
            Plain(-self.0)
        }
    }
    impl AddAssign for Plain {
        fn add_assign(&mut self, o: Self) {
            self.0 += o.0
        }
    }
    impl SubAssign for Plain {
        fn sub_assign(&mut self, o: Self) {
            self.0 -= o.0
        }
    }
    impl MulAssign for Plain {
        fn mul_assign(&mut self, o: Self) {
            self.0 *= o.0
        }
    }
    impl Scalar for Plain {
        const DTYPE: DType = DType::F64;
        fn from_f64(v: f64) -> Self {
            Plain(v)
        }
        fn to_f64(self) -> f64 {
            self.0
        }
    }

    #[test]
    fn naive_and_blas_paths_agree_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        // B supplied transposed: stored n×k.
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        f64::gemm(m, k, n, &a, (k, 1), &bt, (1, k), &mut c, (n, 1), false);

        let ap: Vec<Plain> = a.iter().map(|&v| Plain(v)).collect();
        let bp: Vec<Plain> = b.iter().map(|&v| Plain(v)).collect();
        let mut cp = vec![Plain(1.0); m * n];
        Plain::gemm(m, k, n, &ap, (k, 1), &bp, (n, 1), &mut cp, (n, 1), true);
        for (x, y) in c.iter().zip(&cp) {
            assert!((x + 1.0 - y.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dtype_tags_round_trip() {
        for d in [DType::F32, DType::F64] {
            assert_eq!(DType::from_tag(d as u8), Some(d));
        }
        assert_eq!(DType::from_tag(7), None);
    }
}
