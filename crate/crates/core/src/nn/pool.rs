//! Non-overlapping 2×2 max-pooling with stride 2.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv::batch_dims;

/// Pooled output plus, for each output element, the flat input index of
/// the window maximum.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn pooled_shape(shape: &[usize]) -> Result<Vec<usize>> {
    let (_, [_, h, w]) = batch_dims(shape)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "2×2 max-pooling needs even spatial dims, got {shape:?}"
        )));
    }
    let mut out = shape.to_vec();
    let r = out.len();
    out[r - 2] = h / 2;
    out[r - 1] = w / 2;
    Ok(out)
}

pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let out_shape = pooled_shape(input.shape())?;
    let (n, [c, h, w]) = batch_dims(input.shape())?;
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * w + 2 * xo;
                // Row-major window order; ties keep the first element.
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&out_shape, out)?,
        argmax,
    })
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    grad_out.expect_shape(&pooled_shape(input_shape)?)?;
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2x2(&x).unwrap();
        assert_eq!(p.output.shape(), &[1, 1, 1]);
        assert_eq!(p.output.data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_position() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 0.5);
        let p = maxpool2x2(&x).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 0.5));
        let g = Tensor::full(&[1, 1, 2, 2], 1.0);
        let gi = maxpool2x2_backward(&g, &p.argmax, x.shape()).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(gi.data(), &expected[..]);
    }

    #[test]
    fn halves_spatial_dims() {
        let x = Tensor::<f32>::zeros(&[2, 6, 28, 28]);
        assert_eq!(maxpool2x2(&x).unwrap().output.shape(), &[2, 6, 14, 14]);
        assert!(maxpool2x2(&Tensor::<f32>::zeros(&[1, 7, 7])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Distinct values keep the argmax stable under small perturbations.
        let data: Vec<f64> = (0..32).map(|i| ((i * 7919) % 97) as f64 * 0.01).collect();
        let x = Tensor::from_vec(&[2, 4, 4], data).unwrap();
        let r: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let r = Tensor::from_vec(&[2, 2, 2], r).unwrap();
        let loss = |x: &Tensor<f64>| {
            let p = maxpool2x2(x).unwrap();
            p.output.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let p = maxpool2x2(&x).unwrap();
        let g = maxpool2x2_backward(&r, &p.argmax, x.shape()).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut a = x.clone();
            a.data_mut()[i] += h;
            let mut b = x.clone();
            b.data_mut()[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }
}
