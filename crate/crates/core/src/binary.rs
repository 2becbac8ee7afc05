//! Binary-weight convolution.
//!
//! A real filter bank `W` (O×C×h×w) is approximated per output filter by
//! `α·B` with `B = sign(W) ∈ {−1,+1}` and `α = ‖W‖₁ / n`, `n = c·h·w`.
//! Convolution then reduces to signed accumulation of input values followed
//! by a single multiply by `α` per output element. `sign(0)` is taken as +1.
//!
//! Training uses the straight-through protocol: forward and backward both see
//! `α·B`, and the resulting filter gradient is applied to the retained real
//! weights by the optimizer.

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, output_shape, plan, ConvGrads, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BinaryFilter<T> {
    real: Tensor<T>,
    signs: Tensor<T>,
    positive: Vec<bool>,
    alpha: Vec<T>,
    fan_in: usize,
}

pub fn binarize<T: Scalar>(w: &Tensor<T>) -> Result<BinaryFilter<T>> {
    if w.rank() != 4 {
        return Err(Error::InvalidShape(format!(
            "filter bank must be O×C×h×w, got {:?}",
            w.shape()
        )));
    }
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !w.all_finite() {
        return Err(Error::NonFiniteWeight("binarize".into()));
    }
    let fan_in = w.len() / w.shape()[0];
    let positive: Vec<bool> = w.data().iter().map(|v| v.to_f64() >= 0.0).collect();
    let signs = Tensor::from_vec(
        w.shape(),
        positive.iter().map(|&p| if p { T::one() } else { -T::one() }).collect(),
    )?;
    // α accumulates in f64 regardless of the model precision.
    let alpha = w
        .data()
        .chunks_exact(fan_in)
        .map(|f| T::from_f64(f.iter().map(|v| v.to_f64().abs()).sum::<f64>() / fan_in as f64))
        .collect();
    Ok(BinaryFilter {
        real: w.clone(),
        signs,
        positive,
        alpha,
        fan_in,
    })
}

impl<T: Scalar> BinaryFilter<T> {
    pub fn real_weights(&self) -> &Tensor<T> {
        &self.real
    }

    /// `B`, entries exactly ±1.
    pub fn signs(&self) -> &Tensor<T> {
        &self.signs
    }

    /// One scaling factor per output filter.
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// `n = c·h·w`
    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn out_channels(&self) -> usize {
        self.alpha.len()
    }

    /// The dense filter `α·B` both passes are defined against.
    pub fn effective(&self) -> Tensor<T> {
        let mut out = self.signs.clone();
        for (filter, &a) in out.data_mut().chunks_exact_mut(self.fan_in).zip(&self.alpha) {
            filter.iter_mut().for_each(|v| *v = if *v > T::zero() { a } else { -a });
        }
        out
    }
}

/// `out[o] = α_o · (I ⊕ B_o)`: the accumulation performs no multiplies.
pub fn binary_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    filter: &BinaryFilter<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, o, g) = plan(input, filter.signs.shape(), stride, padding)?;
    let (k, p) = (g.patch_len(), g.positions());
    let mut out = Tensor::zeros(&output_shape(input.shape(), o, &g));
    let mut col = vec![T::zero(); k * p];
    let mut neg = vec![T::zero(); k * p];
    for (img, dst) in input
        .data()
        .chunks_exact(g.in_len())
        .zip(out.data_mut().chunks_exact_mut(o * p))
        .take(n)
    {
        g.im2col(img, &mut col);
        neg.iter_mut().zip(&col).for_each(|(d, &s)| *d = -s);
        // Tiles of positions keep the active slice of `col` in cache across filters.
        for start in (0..p).step_by(TILE) {
            let end = (start + TILE).min(p);
            for ((row, signs), &alpha) in dst
                .chunks_exact_mut(p)
                .zip(filter.positive.chunks_exact(k))
                .zip(&filter.alpha)
            {
                let row = &mut row[start..end];
                let lines = signs.iter().enumerate().map(|(i, &pos)| {
                    let src = if pos { &col } else { &neg };
                    &src[i * p + start..i * p + end]
                });
                signed_accumulate(row, lines);
                row.iter_mut().for_each(|v| *v *= alpha);
            }
        }
    }
    Ok(out)
}

const TILE: usize = 256;

/// `row = Σ_k line_k` over pre-signed lines; additions only, `k - 1` per
/// element, folded four lines at a time.
fn signed_accumulate<'a, T: Scalar>(row: &mut [T], lines: impl Iterator<Item = &'a [T]>) {
    let lines: Vec<&[T]> = lines.collect();
    let mut groups = lines.chunks(4);
    match groups.next() {
        Some(&[a, b, c, d]) => {
            let n = row.len();
            let (a, b, c, d) = (&a[..n], &b[..n], &c[..n], &d[..n]);
            for (i, r) in row.iter_mut().enumerate() {
                *r = (a[i] + b[i]) + (c[i] + d[i]);
            }
        }
        Some(rest) => {
            row.copy_from_slice(rest[0]);
            for line in &rest[1..] {
                row.iter_mut().zip(*line).for_each(|(d, &s)| *d += s);
            }
            return;
        }
        None => return,
    }
    for group in groups {
        if let &[a, b, c, d] = group {
            let n = row.len();
            let (a, b, c, d) = (&a[..n], &b[..n], &c[..n], &d[..n]);
            for (i, r) in row.iter_mut().enumerate() {
                *r += (a[i] + b[i]) + (c[i] + d[i]);
            }
        } else {
            for line in group {
                row.iter_mut().zip(*line).for_each(|(d, &s)| *d += s);
            }
        }
    }
}

/// Gradients through the effective filter `α·B` (α and B held fixed).
///
/// Returns `(grad_input, grad_W)`; `grad_W` is meant for the real weights.
pub fn binary_conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filter: &BinaryFilter<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let ConvGrads { input: gi, weight, .. } =
        binary_conv2d_backward_opt(grad_out, input, filter, stride, padding, true)?;
    Ok((gi.expect("input gradient requested"), weight))
}

pub(crate) fn binary_conv2d_backward_opt<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filter: &BinaryFilter<T>,
    stride: usize,
    padding: Padding,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    conv2d_backward(grad_out, input, &filter.effective(), stride, padding, want_input_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::conv2d_forward;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn binarize_single_filter() {
        let w = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.5, -0.3, 0.2, -0.4]).unwrap();
        let f = binarize(&w).unwrap();
        assert_eq!(f.signs().data(), &[1.0, -1.0, 1.0, -1.0]);
        assert!((f.alpha()[0] - 0.35).abs() < 1e-15);
        assert_eq!(f.real_weights(), &w);
        assert_eq!(f.fan_in(), 4);
    }

    #[test]
    fn constant_and_negated_filters() {
        let w = Tensor::<f64>::full(&[2, 3, 2, 2], 0.25);
        let f = binarize(&w).unwrap();
        assert!(f.signs().data().iter().all(|&v| v == 1.0));
        assert_eq!(f.alpha(), &[0.25, 0.25]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let neg = w.map(|v| -v);
        let (a, b) = (binarize(&w).unwrap(), binarize(&neg).unwrap());
        assert_eq!(a.alpha(), b.alpha());
        for (x, y) in a.signs().data().iter().zip(b.signs().data()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![0.0, -0.0]).unwrap();
        assert_eq!(binarize(&w).unwrap().signs().data(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![f64::NAN, 1.0]).unwrap();
        assert!(binarize(&w).unwrap_err().to_string().contains("non-finite weight"));
    }

    #[test]
    fn ones_input_sums_window() {
        let x = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        // Real weights of ±0.5 give B = +1 and α = 0.5.
        let w = Tensor::<f64>::full(&[1, 1, 2, 2], 0.5);
        let f = binarize(&w).unwrap();
        let y = binary_conv2d_forward(&x, &f, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mnist_first_layer_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, &[1, 28, 28]);
        let f = binarize(&random(&mut rng, &[6, 1, 6, 6])).unwrap();
        let y = binary_conv2d_forward(&x, &f, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[6, 28, 28]);
    }

    #[test]
    fn equals_dense_conv_with_effective_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..50 {
            let stride = 1 + case % 2;
            let padding = if case % 3 == 0 { Padding::Valid } else { Padding::Same };
            let x: Tensor<f32> = random(&mut rng, &[2, 2, 7, 7]).map(|v| (v + 1.0) / 2.0).cast();
            let w: Tensor<f32> = random(&mut rng, &[3, 2, 3, 3]).map(|v| v * 0.1).cast();
            let f = binarize(&w).unwrap();
            let fast = binary_conv2d_forward(&x, &f, stride, padding).unwrap();
            let dense = conv2d_forward(&x, &f.effective(), None, stride, padding).unwrap();
            assert!(fast.max_abs_diff(&dense) < 1e-6);
        }
    }

    #[test]
    fn backward_zero_and_scalar_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let f = binarize(&random(&mut rng, &[3, 2, 3, 3])).unwrap();
        let (gi, gw) = binary_conv2d_backward(&Tensor::zeros(&[1, 3, 5, 5]), &x, &f, 1, Padding::Same).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));

        // Single pixel, 1×1 filter: dI = g·α·B, dW = g·I.
        let x = Tensor::<f64>::from_vec(&[1, 1, 1], vec![0.7]).unwrap();
        let f = binarize(&Tensor::from_vec(&[1, 1, 1, 1], vec![-0.4]).unwrap()).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![1.5]).unwrap();
        let (gi, gw) = binary_conv2d_backward(&g, &x, &f, 1, Padding::Valid).unwrap();
        assert!((gi.data()[0] - -(1.5 * 0.4)).abs() < 1e-15);
        assert!((gw.data()[0] - 1.5 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences_through_effective_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(stride, padding) in &[(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
            let x = random(&mut rng, &[2, 2, 6, 6]);
            let f = binarize(&random(&mut rng, &[3, 2, 3, 3])).unwrap();
            let eff = f.effective();
            let y = binary_conv2d_forward(&x, &f, stride, padding).unwrap();
            let r = random(&mut rng, y.shape());
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>| {
                let y = conv2d_forward(x, w, None, stride, padding).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (gi, gw) = binary_conv2d_backward(&r, &x, &f, stride, padding).unwrap();
            let h = 1e-6;
            let rel = |fd: f64, a: f64| (fd - a).abs() / fd.abs().max(a.abs()).max(1e-3);
            for i in 0..x.len() {
                let mut a = x.clone();
                a.data_mut()[i] += h;
                let mut b = x.clone();
                b.data_mut()[i] -= h;
                let fd = (loss(&a, &eff) - loss(&b, &eff)) / (2.0 * h);
                assert!(rel(fd, gi.data()[i]) < 1e-4);
            }
            for i in 0..eff.len() {
                let mut a = eff.clone();
                a.data_mut()[i] += h;
                let mut b = eff.clone();
                b.data_mut()[i] -= h;
                let fd = (loss(&x, &a) - loss(&x, &b)) / (2.0 * h);
                assert!(rel(fd, gw.data()[i]) < 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn type_invariants(seed in any::<u64>(), o in 1usize..4, c in 1usize..3, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(&mut rng, &[o, c, k, k]);
            let f = binarize(&w).unwrap();
            let n = c * k * k;
            prop_assert_eq!(f.fan_in(), n);
            prop_assert!(f.signs().data().iter().all(|&v| v == 1.0 || v == -1.0));
            for (j, filter) in w.data().chunks(n).enumerate() {
                let expected = filter.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
                prop_assert!((f.alpha()[j] - expected).abs() < 1e-15);
                prop_assert!(f.alpha()[j] >= 0.0);
            }
            // Re-binarizing ±1 gives α = 1 and the same signs.
            let again = binarize(f.signs()).unwrap();
            prop_assert!(again.alpha().iter().all(|&a| a == 1.0));
            prop_assert_eq!(again.signs(), f.signs());
        }
    }
}
