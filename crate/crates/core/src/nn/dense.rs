//! Fully-connected layer `y = W·x + b`, batched over rows of `x`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims<T>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (out, inp) = match *weight.shape() {
        [o, i] => (o, i),
        _ => {
            return Err(Error::InvalidShape(format!(
                "weight must be out×in, got {:?}",
                weight.shape()
            )))
        }
    };
    let batch = match *x.shape() {
        [i] if i == inp => 1,
        [n, i] if i == inp => n,
        _ => return Err(Error::shape(&[inp], x.shape())),
    };
    Ok((batch, out, inp))
}

pub fn fully_connected<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, out, inp) = dims(x, weight)?;
    bias.expect_shape(&[out])?;
    let shape: Vec<usize> = if x.rank() == 1 { vec![out] } else { vec![n, out] };
    let mut y = Tensor::zeros(&shape);
    // y[n×out] = x[n×in] · Wᵀ[in×out]
    T::gemm(
        n,
        inp,
        out,
        x.data(),
        (inp, 1),
        weight.data(),
        (1, inp),
        y.data_mut(),
        (out, 1),
        false,
    );
    for row in y.data_mut().chunks_exact_mut(out) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fully_connected_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, out, inp) = dims(x, weight)?;
    if grad_out.len() != n * out {
        return Err(Error::shape(&[n, out], grad_out.shape()));
    }
    let g = grad_out.data();
    let mut gx = Tensor::zeros(x.shape());
    T::gemm(
        n,
        out,
        inp,
        g,
        (out, 1),
        weight.data(),
        (inp, 1),
        gx.data_mut(),
        (inp, 1),
        false,
    );
    let mut gw = Tensor::zeros(weight.shape());
    T::gemm(
        out,
        n,
        inp,
        g,
        (1, out),
        x.data(),
        (inp, 1),
        gw.data_mut(),
        (inp, 1),
        false,
    );
    let mut gb = Tensor::zeros(&[out]);
    for row in g.chunks_exact(out) {
        for (b, &v) in gb.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(DenseGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_zero_weights() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(fully_connected(&x, &eye, &zero_b).unwrap().data(), x.data());
        let b = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let zero_w = Tensor::zeros(&[3, 3]);
        assert_eq!(fully_connected(&x, &zero_w, &b).unwrap().data(), b.data());
    }

    #[test]
    fn rejects_mismatched_input() {
        let x = Tensor::<f64>::zeros(&[2, 4]);
        let w = Tensor::<f64>::zeros(&[3, 5]);
        assert!(fully_connected(&x, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let f = |i: usize, s: f64| ((i as f64 + 1.0) * s).sin();
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| f(i, 0.7)).collect()).unwrap();
        let w = Tensor::from_vec(&[5, 4], (0..20).map(|i| f(i, 1.3)).collect()).unwrap();
        let b = Tensor::from_vec(&[5], (0..5).map(|i| f(i, 2.1)).collect()).unwrap();
        let r = Tensor::from_vec(&[3, 5], (0..15).map(|i| f(i, 0.4)).collect()).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let y = fully_connected(x, w, b).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = fully_connected_backward(&r, &x, &w).unwrap();
        let h = 1e-6;
        let fd = |t: &Tensor<f64>, i: usize, eval: &dyn Fn(&Tensor<f64>) -> f64| {
            let mut a = t.clone();
            a.data_mut()[i] += h;
            let mut c = t.clone();
            c.data_mut()[i] -= h;
            (eval(&a) - eval(&c)) / (2.0 * h)
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1.0);
        for i in 0..x.len() {
            assert!(close(fd(&x, i, &|t| loss(t, &w, &b)), g.input.data()[i]));
        }
        for i in 0..w.len() {
            assert!(close(fd(&w, i, &|t| loss(&x, t, &b)), g.weight.data()[i]));
        }
        for i in 0..b.len() {
            assert!(close(fd(&b, i, &|t| loss(&x, &w, t)), g.bias.data()[i]));
        }
    }
}
