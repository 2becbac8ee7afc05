//! Averaging of the two branch feature vectors ahead of the shared head.
//!
//! Weighted mode computes `W·yy_b + (1 − W)·yy_h` with a scalar `W ∈ [0,1]`;
//! simple mode fixes `W = 1/2`. Averaging replaces any multiplicative
//! (bilinear) interaction between the branches.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Simple,
    Weighted,
}

#[derive(Debug, Clone)]
pub struct Combiner<T> {
    pub mode: CombineMode,
    /// Shape `[1]`. Fixed at 0.5 in simple mode.
    pub weight: Tensor<T>,
    pub trainable: bool,
}

pub const COMBINER_PARAM: &str = "combine.weight";

/// Normal(0.5, 0.25) restricted to `[0,1]` by rejection.
pub fn truncated_normal_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let dist = Normal::new(0.5, 0.25).expect("valid normal");
    loop {
        let v = dist.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

impl<T: Scalar> Combiner<T> {
    pub fn simple() -> Self {
        Combiner {
            mode: CombineMode::Simple,
            weight: Tensor::scalar(T::from_f64(0.5)),
            trainable: false,
        }
    }

    pub fn weighted(w: f64, trainable: bool) -> Self {
        Combiner {
            mode: CombineMode::Weighted,
            weight: Tensor::scalar(T::from_f64(w)),
            trainable,
        }
    }

    pub fn weighted_random<R: Rng + ?Sized>(rng: &mut R, trainable: bool) -> Self {
        Self::weighted(truncated_normal_unit(rng), trainable)
    }

    pub fn w(&self) -> T {
        self.weight.data()[0]
    }

    /// Weighted mode exposes `W` as a parameter (frozen or not) so it is
    /// checkpointed; simple mode has none.
    pub fn has_param(&self) -> bool {
        self.mode == CombineMode::Weighted
    }

    pub fn clamp(&mut self) {
        let w = self.w().to_f64().clamp(0.0, 1.0);
        self.weight.data_mut()[0] = T::from_f64(w);
    }
}

pub fn combine<T: Scalar>(yy_b: &Tensor<T>, yy_h: &Tensor<T>, combiner: &Combiner<T>) -> Result<Tensor<T>> {
    if yy_b.shape() != yy_h.shape() {
        return Err(Error::InvalidShape(format!(
            "branch outputs must flatten to the same length to be averaged: {:?} vs {:?}",
            yy_b.shape(),
            yy_h.shape()
        )));
    }
    let data = match combiner.mode {
        CombineMode::Simple => {
            let half = T::from_f64(0.5);
            yy_b.data()
                .iter()
                .zip(yy_h.data())
                .map(|(&a, &b)| (a + b) * half)
                .collect()
        }
        CombineMode::Weighted => {
            let w = combiner.w();
            let rest = T::from_f64(1.0 - w.to_f64());
            yy_b.data()
                .iter()
                .zip(yy_h.data())
                .map(|(&a, &b)| w * a + rest * b)
                .collect()
        }
    };
    Tensor::from_vec(yy_b.shape(), data)
}

/// Gradients w.r.t. `(yy_b, yy_h, W)`. The `W` gradient is zero when the
/// combiner is frozen or in simple mode.
pub fn combine_backward<T: Scalar>(
    grad: &Tensor<T>,
    yy_b: &Tensor<T>,
    yy_h: &Tensor<T>,
    combiner: &Combiner<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad.expect_shape(yy_b.shape())?;
    let (wb, wh) = match combiner.mode {
        CombineMode::Simple => (T::from_f64(0.5), T::from_f64(0.5)),
        CombineMode::Weighted => (combiner.w(), T::from_f64(1.0 - combiner.w().to_f64())),
    };
    let gb = grad.map(|g| g * wb);
    let gh = grad.map(|g| g * wh);
    let mut gw = T::zero();
    if combiner.mode == CombineMode::Weighted && combiner.trainable {
        for ((&g, &a), &b) in grad.data().iter().zip(yy_b.data()).zip(yy_h.data()) {
            gw += g * (a - b);
        }
    }
    Ok((gb, gh, Tensor::scalar(gw)))
}
