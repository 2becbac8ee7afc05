//! Inverted dropout: survivors are scaled by `1/p_keep` at training time so
//! inference is the identity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Applies dropout. Returns the output and, in training mode with
/// `p_keep < 1`, the per-element multiplier (`0` or `1/p_keep`).
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p_keep: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(p_keep > 0.0 && p_keep <= 1.0) {
        return Err(Error::Config(format!("keep probability {p_keep} not in (0, 1]")));
    }
    if !training || p_keep == 1.0 {
        return Ok((x.clone(), None));
    }
    let scale = T::from_f64(1.0 / p_keep);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p_keep { scale } else { T::zero() })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::from_vec(grad_out.shape(), data).expect("mask matches gradient")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, m) = dropout(&x, 1.0, true, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, _) = dropout(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&x, 0.0, true, &mut rng).is_err());
    }

    #[test]
    fn keep_rate_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::<f64>::full(&[100_000], 1.0);
        for p in [0.5, 0.75] {
            let (y, _) = dropout(&x, p, true, &mut rng).unwrap();
            let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
            assert!((kept - p).abs() < 0.01, "p={p}: kept {kept}");
            assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / p).abs() < 1e-12));
        }
    }

    #[test]
    fn backward_reuses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::full(&[64], 2.0);
        let (y, mask) = dropout(&x, 0.75, true, &mut rng).unwrap();
        let g = dropout_backward(&Tensor::full(&[64], 1.0), mask.as_deref());
        for (gy, yy) in g.data().iter().zip(y.data()) {
            assert_eq!(*gy * 2.0, *yy);
        }
    }
}
