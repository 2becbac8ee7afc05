use rand::Rng;

use crate::binary::{binarize, binary_conv2d_backward_opt, binary_conv2d_forward, BinaryFilter};
use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use crate::nn::{
    dropout, dropout_backward, fully_connected, fully_connected_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input gradient (when requested) and parameter gradients.
pub type Grads<T> = (Option<Tensor<T>>, Vec<Tensor<T>>);

#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub name: String,
    /// Real-valued `O×C×h×w` filters. Binary layers binarize these on
    /// every forward pass.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: Padding,
    pub binary: bool,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn geometry(&self, in_chw: &[usize]) -> Result<ConvGeometry> {
        let chw: [usize; 3] = in_chw
            .try_into()
            .map_err(|_| Error::InvalidShape(format!("{}: expected C×H×W input, got {in_chw:?}", self.name)))?;
        let w = self.weight.shape();
        if chw[0] != w[1] {
            return Err(Error::InvalidShape(format!(
                "{}: input has {} channels, filters expect {}",
                self.name, chw[0], w[1]
            )));
        }
        ConvGeometry::new(chw, [w[2], w[3]], self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer<T> {
    pub name: String,
    /// `out×in`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    Relu,
    MaxPool,
    Dropout { keep: f64 },
    Flatten,
    Dense(DenseLayer<T>),
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv {
        input: Tensor<T>,
        filter: Option<BinaryFilter<T>>,
    },
    Relu {
        input: Tensor<T>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn label(&self) -> String {
        match self {
            Layer::Conv(c) => {
                let w = c.weight.shape();
                format!(
                    "{} {}x{} conv {} s{} {:?}{}",
                    c.name,
                    w[2],
                    w[3],
                    w[0],
                    c.stride,
                    c.padding,
                    if c.binary { " binary" } else { "" }
                )
            }
            Layer::Relu => "relu".into(),
            Layer::MaxPool => "maxpool 2x2".into(),
            Layer::Dropout { keep } => format!("dropout keep={keep}"),
            Layer::Flatten => "flatten".into(),
            Layer::Dense(d) => format!("{} fc {}", d.name, d.weight.shape()[0]),
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => {
                let g = c.geometry(input)?;
                Ok(vec![c.out_channels(), g.out_h, g.out_w])
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::MaxPool => crate::nn::pool::pooled_shape(input),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                let inp = d.weight.shape()[1];
                if input != [inp] {
                    return Err(Error::shape(&[inp], input));
                }
                Ok(vec![d.weight.shape()[0]])
            }
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Layer::Conv(c) => {
                let mut v = vec![(format!("{}.weight", c.name), &c.weight)];
                if let Some(b) = &c.bias {
                    v.push((format!("{}.bias", c.name), b));
                }
                v
            }
            Layer::Dense(d) => vec![
                (format!("{}.weight", d.name), &d.weight),
                (format!("{}.bias", d.name), &d.bias),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            Layer::Conv(c) => {
                let mut v = vec![(format!("{}.weight", c.name), &mut c.weight)];
                if let Some(b) = &mut c.bias {
                    v.push((format!("{}.bias", c.name), b));
                }
                v
            }
            Layer::Dense(d) => vec![
                (format!("{}.weight", d.name), &mut d.weight),
                (format!("{}.bias", d.name), &mut d.bias),
            ],
            _ => Vec::new(),
        }
    }

    /// Batched forward. Inputs carry a leading batch dimension.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Conv(c) => {
                if c.binary {
                    let filter = binarize(&c.weight).map_err(|e| match e {
                        Error::NonFiniteWeight(_) => Error::NonFiniteWeight(c.name.clone()),
                        other => other,
                    })?;
                    let y = binary_conv2d_forward(x, &filter, c.stride, c.padding)?;
                    (
                        y,
                        LayerCache::Conv {
                            input: x.clone(),
                            filter: Some(filter),
                        },
                    )
                } else {
                    let y = conv2d_forward(x, &c.weight, c.bias.as_ref(), c.stride, c.padding)?;
                    (
                        y,
                        LayerCache::Conv {
                            input: x.clone(),
                            filter: None,
                        },
                    )
                }
            }
            Layer::Relu => (relu(x), LayerCache::Relu { input: x.clone() }),
            Layer::MaxPool => {
                let p = maxpool2x2(x)?;
                (
                    p.output,
                    LayerCache::MaxPool {
                        argmax: p.argmax,
                        input_shape: x.shape().to_vec(),
                    },
                )
            }
            Layer::Dropout { keep } => {
                let (y, mask) = dropout(x, *keep, training, rng)?;
                (y, LayerCache::Dropout { mask })
            }
            Layer::Flatten => {
                let n = x.shape()[0];
                let per = x.len() / n.max(1);
                (
                    x.clone().reshape(&[n, per])?,
                    LayerCache::Flatten {
                        input_shape: x.shape().to_vec(),
                    },
                )
            }
            Layer::Dense(d) => (
                fully_connected(x, &d.weight, &d.bias)?,
                LayerCache::Dense { input: x.clone() },
            ),
        })
    }

    /// Returns the input gradient (when requested) and parameter gradients
    /// in [`Layer::params`] order.
    pub fn backward(&self, cache: &LayerCache<T>, grad: &Tensor<T>, want_input_grad: bool) -> Result<Grads<T>> {
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Conv { input, filter }) => {
                let g = match filter {
                    Some(f) => binary_conv2d_backward_opt(grad, input, f, c.stride, c.padding, want_input_grad)?,
                    None => conv2d_backward(grad, input, &c.weight, c.stride, c.padding, want_input_grad)?,
                };
                let mut params = vec![g.weight];
                if c.bias.is_some() {
                    params.push(g.bias);
                }
                Ok((g.input, params))
            }
            (Layer::Relu, LayerCache::Relu { input }) => Ok((Some(relu_backward(grad, input)?), Vec::new())),
            (Layer::MaxPool, LayerCache::MaxPool { argmax, input_shape }) => {
                Ok((Some(maxpool2x2_backward(grad, argmax, input_shape)?), Vec::new()))
            }
            (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                Ok((Some(dropout_backward(grad, mask.as_deref())), Vec::new()))
            }
            (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                Ok((Some(grad.clone().reshape(input_shape)?), Vec::new()))
            }
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                let g = fully_connected_backward(grad, input, &d.weight)?;
                Ok((Some(g.input), vec![g.weight, g.bias]))
            }
            _ => Err(Error::Format("layer/cache mismatch".into())),
        }
    }
}
