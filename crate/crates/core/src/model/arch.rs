//! The fixed architectures: {ConvPool, All-CNN} × {MNIST, CIFAR-10}, each
//! instantiated as one of five variants.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::{CombineMode, Combiner};
use super::layer::{ConvLayer, DenseLayer, Layer};
use super::{Branch, Model};
use crate::error::{Error, Result};
use crate::nn::conv::Padding;
use crate::optim::{init_bias, init_weights, InitScheme};
use crate::scalar::Scalar;

macro_rules! cli_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of {}"),
                        s,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

cli_enum!(DatasetKind { Mnist => "mnist", Cifar10 => "cifar10" });
cli_enum!(Arch { ConvPool => "convpool", AllCnn => "allcnn" });
cli_enum!(Variant {
    Cnn => "cnn",
    Bwn => "bwn",
    Hin => "hin",
    BwhinNormal => "bwhin-normal",
    BwhinRandom => "bwhin-random",
});

/// Which preprocessing a branch consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Raw,
    Hadamard,
}

impl DatasetKind {
    /// Raw image shape `C×H×W`.
    pub fn image_shape(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [1, 28, 28],
            DatasetKind::Cifar10 => [3, 32, 32],
        }
    }

    /// Shape after the per-channel Hadamard transform (each axis padded to a
    /// power of two).
    pub fn hadamard_shape(self) -> [usize; 3] {
        let [c, h, w] = self.image_shape();
        [c, h.next_power_of_two(), w.next_power_of_two()]
    }

    pub fn input_shape(self, input: InputKind) -> [usize; 3] {
        match input {
            InputKind::Raw => self.image_shape(),
            InputKind::Hadamard => self.hadamard_shape(),
        }
    }
}

impl Variant {
    pub fn binary_weights(self) -> bool {
        self != Variant::Cnn
    }

    pub fn inputs(self) -> &'static [InputKind] {
        match self {
            Variant::Cnn | Variant::Bwn => &[InputKind::Raw],
            Variant::Hin => &[InputKind::Hadamard],
            Variant::BwhinNormal | Variant::BwhinRandom => &[InputKind::Raw, InputKind::Hadamard],
        }
    }

    pub fn combine_mode(self) -> Option<CombineMode> {
        match self {
            Variant::BwhinNormal => Some(CombineMode::Simple),
            Variant::BwhinRandom => Some(CombineMode::Weighted),
            _ => None,
        }
    }

    /// Row label used in accuracy reports.
    pub fn report_label(self) -> &'static str {
        match self {
            Variant::Cnn => "CNN",
            Variant::Bwn => "BWN",
            Variant::Hin => "HIN",
            Variant::BwhinNormal => "BWHIN-NormalAvg",
            Variant::BwhinRandom => "BWHIN-RandomAvg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelKind {
    pub dataset: DatasetKind,
    pub arch: Arch,
    pub variant: Variant,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dataset, self.arch, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Keep-probabilities in network order. MNIST uses one (FC dropout);
    /// CIFAR-10 uses three (two conv blocks, then FC).
    pub keep_probs: Vec<f64>,
    pub w_combined_trainable: bool,
    pub init: InitScheme,
}

impl BuildOptions {
    pub fn defaults(dataset: DatasetKind) -> Self {
        match dataset {
            DatasetKind::Mnist => BuildOptions {
                keep_probs: vec![0.75],
                w_combined_trainable: true,
                init: InitScheme::Gaussian { std: 0.1 },
            },
            DatasetKind::Cifar10 => BuildOptions {
                keep_probs: vec![0.75, 0.75, 0.5],
                w_combined_trainable: true,
                init: InitScheme::XavierUniform,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Conv {
        out: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    Pool,
    Dropout(usize),
}

const fn conv(out: usize, k: usize, stride: usize) -> Step {
    Step::Conv {
        out,
        k,
        stride,
        padding: Padding::Same,
    }
}

fn conv_steps(dataset: DatasetKind, arch: Arch, input: InputKind) -> Vec<Step> {
    use Step::{Dropout, Pool, Relu};
    let mut steps = match (dataset, arch) {
        (DatasetKind::Mnist, Arch::ConvPool) => vec![
            conv(6, 6, 1),
            Relu,
            conv(12, 5, 1),
            Relu,
            Pool,
            conv(24, 4, 1),
            Relu,
            Pool,
        ],
        (DatasetKind::Mnist, Arch::AllCnn) => {
            vec![conv(6, 6, 1), Relu, conv(12, 5, 2), Relu, conv(24, 4, 2), Relu]
        }
        (DatasetKind::Cifar10, Arch::ConvPool) => vec![
            conv(32, 3, 1),
            Relu,
            conv(32, 3, 1),
            Relu,
            Pool,
            Dropout(0),
            conv(64, 3, 1),
            Relu,
            conv(64, 3, 1),
            Relu,
            Pool,
            Dropout(1),
        ],
        (DatasetKind::Cifar10, Arch::AllCnn) => vec![
            conv(32, 3, 1),
            Relu,
            conv(32, 3, 2),
            Relu,
            Dropout(0),
            conv(64, 3, 1),
            Relu,
            conv(64, 3, 2),
            Relu,
            Dropout(1),
        ],
    };
    // A padded 32×32 Hadamard MNIST image goes through a 5×5 valid first
    // conv so the branch lands back on 28×28.
    if dataset == DatasetKind::Mnist && input == InputKind::Hadamard {
        steps[0] = Step::Conv {
            out: 6,
            k: 5,
            stride: 1,
            padding: Padding::Valid,
        };
    }
    steps
}

fn head_widths(dataset: DatasetKind) -> (usize, usize) {
    // (hidden units, index of the FC keep-probability)
    match dataset {
        DatasetKind::Mnist => (200, 0),
        DatasetKind::Cifar10 => (512, 2),
    }
}

pub const NUM_CLASSES: usize = 10;

fn keep(opts: &BuildOptions, idx: usize) -> Result<f64> {
    opts.keep_probs.get(idx).copied().ok_or_else(|| {
        Error::Config(format!(
            "architecture needs keep-probability #{idx}, only {} given",
            opts.keep_probs.len()
        ))
    })
}

fn build_branch<T: Scalar, R: Rng + ?Sized>(
    kind: ModelKind,
    input: InputKind,
    opts: &BuildOptions,
    rng: &mut R,
) -> Result<Branch<T>> {
    let name = match input {
        InputKind::Raw => "raw",
        InputKind::Hadamard => "hadamard",
    };
    let input_shape = kind.dataset.input_shape(input).to_vec();
    let mut channels = input_shape[0];
    let mut layers = Vec::new();
    let mut conv_idx = 0;
    for step in conv_steps(kind.dataset, kind.arch, input) {
        layers.push(match step {
            Step::Conv {
                out,
                k,
                stride,
                padding,
            } => {
                conv_idx += 1;
                let binary = kind.variant.binary_weights();
                let weight = init_weights(&[out, channels, k, k], opts.init, rng);
                let bias = (!binary).then(|| init_bias(out));
                channels = out;
                Layer::Conv(ConvLayer {
                    name: format!("{name}.conv{conv_idx}"),
                    weight,
                    bias,
                    stride,
                    padding,
                    binary,
                })
            }
            Step::Relu => Layer::Relu,
            Step::Pool => Layer::MaxPool,
            Step::Dropout(i) => Layer::Dropout { keep: keep(opts, i)? },
        });
    }
    layers.push(Layer::Flatten);
    Ok(Branch {
        name: name.to_string(),
        input,
        input_shape,
        layers,
    })
}

fn dense<T: Scalar, R: Rng + ?Sized>(name: &str, inp: usize, out: usize, opts: &BuildOptions, rng: &mut R) -> Layer<T> {
    Layer::Dense(DenseLayer {
        name: name.to_string(),
        weight: init_weights(&[out, inp], opts.init, rng),
        bias: init_bias(out),
    })
}

pub fn build_model<T: Scalar, R: Rng + ?Sized>(kind: ModelKind, opts: &BuildOptions, rng: &mut R) -> Result<Model<T>> {
    let mut branches = Vec::new();
    for &input in kind.variant.inputs() {
        branches.push(build_branch(kind, input, opts, rng)?);
    }
    let combiner = kind.variant.combine_mode().map(|mode| match mode {
        CombineMode::Simple => Combiner::simple(),
        CombineMode::Weighted => Combiner::weighted_random(rng, opts.w_combined_trainable),
    });

    let mut shape = branches[0].input_shape.clone();
    for layer in &branches[0].layers {
        shape = layer.output_shape(&shape)?;
    }
    let features = shape[0];
    let (hidden, fc_keep) = head_widths(kind.dataset);
    let head = vec![
        dense("head.fc1", features, hidden, opts, rng),
        Layer::Relu,
        Layer::Dropout {
            keep: keep(opts, fc_keep)?,
        },
        dense("head.fc2", hidden, NUM_CLASSES, opts, rng),
    ];
    Model::new(kind, branches, combiner, head)
}
