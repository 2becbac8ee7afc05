//! Static arithmetic-operation counts for one forward pass of one example.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{CombineMode, InputKind, Layer, Model};
use crate::scalar::Scalar;
use crate::wht::plane_op_counts;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
    pub comparisons: u64,
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
            comparisons: self.comparisons + o.comparisons,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

impl Mul<u64> for OpCount {
    type Output = OpCount;

    fn mul(self, k: u64) -> OpCount {
        OpCount {
            mults: self.mults * k,
            adds: self.adds * k,
            comparisons: self.comparisons * k,
        }
    }
}

impl Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    /// Input transform applied before the network proper.
    Preprocess,
    Conv,
    BinaryConv,
    Relu,
    MaxPool,
    Combine,
    Dense,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub label: String,
    pub kind: OpKind,
    /// Conv layers: `c·kh·kw`, the taps per output element.
    pub fan_in: Option<u64>,
    pub ops: OpCount,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OpReport {
    pub layers: Vec<LayerOps>,
}

impl OpReport {
    pub fn total(&self) -> OpCount {
        self.layers.iter().map(|l| l.ops).sum()
    }

    /// Everything except input preprocessing.
    pub fn network_total(&self) -> OpCount {
        self.layers
            .iter()
            .filter(|l| l.kind != OpKind::Preprocess)
            .map(|l| l.ops)
            .sum()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerOps> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, OpKind::Conv | OpKind::BinaryConv))
    }
}

/// Dense convolution producing `out` elements from `n` taps each.
pub fn dense_conv_ops(out: u64, n: u64, biased: bool) -> OpCount {
    OpCount {
        mults: out * n,
        adds: out * (n - 1) + if biased { out } else { 0 },
        comparisons: 0,
    }
}

/// Sign-only accumulation followed by one α multiply per output element.
pub fn binary_conv_ops(out: u64, n: u64) -> OpCount {
    OpCount {
        mults: out,
        adds: out * (n - 1),
        comparisons: 0,
    }
}

/// `in·out` products; `in − 1` accumulations plus one bias add per output.
pub fn dense_ops(inp: u64, out: u64) -> OpCount {
    OpCount {
        mults: inp * out,
        adds: inp * out,
        comparisons: 0,
    }
}

pub fn combine_ops(len: u64, mode: CombineMode) -> OpCount {
    match mode {
        CombineMode::Simple => OpCount {
            mults: len,
            adds: len,
            comparisons: 0,
        },
        CombineMode::Weighted => OpCount {
            mults: 2 * len,
            adds: len,
            comparisons: 0,
        },
    }
}

fn layer_ops<T: Scalar>(layer: &Layer<T>, input: &[usize], output: &[usize]) -> Result<(OpKind, Option<u64>, OpCount)> {
    let elems = |s: &[usize]| s.iter().product::<usize>() as u64;
    Ok(match layer {
        Layer::Conv(c) => {
            let g = c.geometry(input)?;
            let n = g.patch_len() as u64;
            let out = elems(output);
            if c.binary {
                (OpKind::BinaryConv, Some(n), binary_conv_ops(out, n))
            } else {
                (OpKind::Conv, Some(n), dense_conv_ops(out, n, c.bias.is_some()))
            }
        }
        Layer::Relu => (
            OpKind::Relu,
            None,
            OpCount {
                comparisons: elems(output),
                ..OpCount::default()
            },
        ),
        Layer::MaxPool => (
            OpKind::MaxPool,
            None,
            OpCount {
                comparisons: 3 * elems(output),
                ..OpCount::default()
            },
        ),
        Layer::Dense(d) => {
            let s = d.weight.shape();
            (OpKind::Dense, None, dense_ops(s[1] as u64, s[0] as u64))
        }
        // Inference-mode dropout is the identity.
        Layer::Dropout { .. } | Layer::Flatten => (OpKind::Other, None, OpCount::default()),
    })
}

/// Per-layer operation counts for one inference-mode forward pass of a
/// single example, including Hadamard preprocessing of the input.
pub fn count_forward_ops<T: Scalar>(model: &Model<T>) -> Result<OpReport> {
    let mut layers = Vec::new();
    let mut features = 0u64;
    for b in &model.branches {
        if b.input == InputKind::Hadamard {
            let [c, h, w] = model.kind.dataset.image_shape();
            let (adds, mults) = plane_op_counts(h, w, true);
            layers.push(LayerOps {
                label: format!("{}/fwht", b.name),
                kind: OpKind::Preprocess,
                fan_in: None,
                ops: OpCount {
                    mults: mults * c as u64,
                    adds: adds * c as u64,
                    comparisons: 0,
                },
            });
        }
        let mut shape = b.input_shape.clone();
        for layer in &b.layers {
            let out = layer.output_shape(&shape)?;
            let (kind, fan_in, ops) = layer_ops(layer, &shape, &out)?;
            layers.push(LayerOps {
                label: format!("{}/{}", b.name, layer.label()),
                kind,
                fan_in,
                ops,
            });
            shape = out;
        }
        features = shape.iter().product::<usize>() as u64;
    }
    if let Some(c) = &model.combiner {
        layers.push(LayerOps {
            label: "combine".into(),
            kind: OpKind::Combine,
            fan_in: None,
            ops: combine_ops(features, c.mode),
        });
    }
    let mut shape = vec![features as usize];
    for layer in &model.head {
        let out = layer.output_shape(&shape)?;
        let (kind, fan_in, ops) = layer_ops(layer, &shape, &out)?;
        layers.push(LayerOps {
            label: format!("head/{}", layer.label()),
            kind,
            fan_in,
            ops,
        });
        shape = out;
    }
    Ok(OpReport { layers })
}
