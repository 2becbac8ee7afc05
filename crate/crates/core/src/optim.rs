//! Adam with bias correction, exponential learning-rate decay, and weight
//! initialization schemes.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `lr(t) = floor + (lr0 − floor)·exp(−decay·t)`; `floor` defaults to 0,
/// giving the plain exponential `lr0·exp(−decay·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    #[serde(default)]
    pub floor: f64,
}

impl LrSchedule {
    pub fn exponential(lr0: f64, decay: f64) -> Self {
        LrSchedule { lr0, decay, floor: 0.0 }
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        self.floor + (self.lr0 - self.floor) * (-self.decay * t as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub moments: Vec<Moments<T>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = (String, &'a Tensor<T>)>) -> Self {
        let moments = params
            .into_iter()
            .map(|(name, p)| Moments {
                name,
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            })
            .collect();
        AdamState {
            config,
            moments,
            step: 0,
        }
    }

    /// One bias-corrected update of every parameter.
    ///
    /// Gradients are validated before anything is modified, so an error
    /// leaves both parameters and state untouched.
    pub fn update(&mut self, params: Vec<(String, &mut Tensor<T>)>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), (g, st)) in params.iter().zip(grads.iter().zip(&self.moments)) {
            if *name != st.name {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter order changed: {name} vs {}",
                    st.name
                )));
            }
            g.expect_shape(p.shape())?;
            st.m.expect_shape(p.shape())?;
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(beta1);
        let b2 = T::from_f64(beta2);
        let c1 = T::from_f64(1.0 - beta1);
        let c2 = T::from_f64(1.0 - beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - beta1.powi(t)));
        let corr2 = T::from_f64(1.0 / (1.0 - beta2.powi(t)));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(eps);

        for ((_, p), (g, st)) in params.into_iter().zip(grads.iter().zip(&mut self.moments)) {
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                let m_hat = *mi * corr1;
                let v_hat = *vi * corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Zero-mean Gaussian with the given standard deviation.
    Gaussian { std: f64 },
    /// Glorot/Xavier uniform in ±√(6/(fan_in+fan_out)).
    XavierUniform,
}

/// `(fan_in, fan_out)` for an `out×in` dense matrix or `O×C×h×w` filter bank.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [out, inp] => (inp, out),
        [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn init_weights<T: Scalar, R: Rng + ?Sized>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = match scheme {
        InitScheme::Gaussian { std } => {
            let dist = Normal::new(0.0, std).expect("finite standard deviation");
            (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
        }
        InitScheme::XavierUniform => {
            let (fi, fo) = fans(shape);
            let limit = xavier_limit(fi, fo);
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
            (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
        }
    };
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub const BIAS_INIT: f64 = 0.1;

pub fn init_bias<T: Scalar>(len: usize) -> Tensor<T> {
    Tensor::full(&[len], T::from_f64(BIAS_INIT))
}
