//! A scalar that tallies every arithmetic operation performed on it.
//!
//! Running a model instantiated with [`Counted`] gives an execution-level
//! count to check [`count_forward_ops`](super::count_forward_ops) against.
//! Counters are thread-local.

use std::cell::Cell;
use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::ops::OpCount;
use crate::scalar::{DType, Scalar};

thread_local! {
    static COUNTS: Cell<OpCount> = const { Cell::new(OpCount { mults: 0, adds: 0, comparisons: 0 }) };
}

fn bump(f: impl FnOnce(&mut OpCount)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Runs `f` and returns its result with the operations it performed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCount) {
    let before = COUNTS.with(Cell::get);
    let out = f();
    let after = COUNTS.with(Cell::get);
    let delta = OpCount {
        mults: after.mults - before.mults,
        adds: after.adds - before.adds,
        comparisons: after.comparisons - before.comparisons,
    };
    (out, delta)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counted(pub f64);

impl PartialOrd for Counted {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        bump(|c| c.comparisons += 1);
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! counted_binop {
    ($tr:ident, $f:ident, $op:tt, $field:ident) => {
        #[allow(clippy::suspicious_arithmetic_impl)]
        impl $tr for Counted {
            type Output = Counted;

            fn $f(self, o: Counted) -> Counted {
                bump(|c| c.$field += 1);
                Counted(self.0 $op o.0)
            }
        }
    };
}

macro_rules! counted_assign {
    ($tr:ident, $f:ident, $op:tt, $field:ident) => {
        #[allow(clippy::suspicious_op_assign_impl)]
        impl $tr for Counted {
            fn $f(&mut self, o: Counted) {
                bump(|c| c.$field += 1);
                self.0 $op o.0;
            }
        }
    };
}

counted_binop!(Add, add, +, adds);
counted_binop!(Sub, sub, -, adds);
counted_binop!(Mul, mul, *, mults);
counted_binop!(Div, div, /, mults);
counted_assign!(AddAssign, add_assign, +=, adds);
counted_assign!(SubAssign, sub_assign, -=, adds);
counted_assign!(MulAssign, mul_assign, *=, mults);

impl Neg for Counted {
    type Output = Counted;

    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Scalar for Counted {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        Counted(v)
    }

    fn to_f64(self) -> f64 {
        self.0
    }
}
