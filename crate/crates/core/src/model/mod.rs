//! Model graphs: one or two convolutional branches, an optional combiner,
//! and a shared fully-connected softmax head.

pub mod arch;
pub mod ensemble;
pub mod layer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use arch::{build_model, Arch, BuildOptions, DatasetKind, InputKind, ModelKind, Variant, NUM_CLASSES};
pub use ensemble::{combine, combine_backward, CombineMode, Combiner, COMBINER_PARAM};
pub use layer::{ConvLayer, DenseLayer, Layer, LayerCache};

use crate::error::{Error, Result};
use crate::nn::softmax_xent_batch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wht::fwht_channels;

#[derive(Debug, Clone)]
pub struct Branch<T> {
    pub name: String,
    pub input: InputKind,
    /// Per-example `C×H×W`.
    pub input_shape: Vec<usize>,
    /// Ends in `Flatten`.
    pub layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub kind: ModelKind,
    pub branches: Vec<Branch<T>>,
    pub combiner: Option<Combiner<T>>,
    pub head: Vec<Layer<T>>,
}

#[derive(Debug)]
pub struct ForwardCache<T> {
    branches: Vec<Vec<LayerCache<T>>>,
    features: Vec<Tensor<T>>,
    head: Vec<LayerCache<T>>,
}

fn run_stack<T: Scalar, R: Rng + ?Sized>(
    layers: &[Layer<T>],
    x: &Tensor<T>,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for layer in layers {
        let (y, cache) = layer.forward(&cur, training, rng)?;
        caches.push(cache);
        cur = y;
    }
    Ok((cur, caches))
}

/// Backpropagates through a stack; returns the input gradient (if asked)
/// and the flattened parameter gradients in forward order.
fn backprop_stack<T: Scalar>(
    layers: &[Layer<T>],
    caches: &[LayerCache<T>],
    grad: Tensor<T>,
    want_input_grad: bool,
) -> Result<layer::Grads<T>> {
    let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); layers.len()];
    let mut cur = Some(grad);
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let want = i > 0 || want_input_grad;
        let g = cur.take().expect("upstream gradient present");
        let (gi, params) = layer.backward(cache, &g, want)?;
        per_layer[i] = params;
        cur = gi;
    }
    Ok((cur, per_layer.into_iter().flatten().collect()))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    pub fn new(
        kind: ModelKind,
        branches: Vec<Branch<T>>,
        combiner: Option<Combiner<T>>,
        head: Vec<Layer<T>>,
    ) -> Result<Self> {
        match (branches.len(), combiner.is_some()) {
            (1, false) | (2, true) => {}
            (n, c) => {
                return Err(Error::Config(format!(
                    "{n} branch(es) with combiner={c}: expected one branch, or two with a combiner"
                )))
            }
        }
        let model = Model {
            kind,
            branches,
            combiner,
            head,
        };
        model.declared_shapes()?;
        Ok(model)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .branches
            .iter()
            .flat_map(|b| b.layers.iter().flat_map(|l| l.params()))
            .collect();
        if let Some(c) = self.combiner.as_ref().filter(|c| c.has_param()) {
            out.push((COMBINER_PARAM.to_string(), &c.weight));
        }
        out.extend(self.head.iter().flat_map(|l| l.params()));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = self
            .branches
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut().flat_map(|l| l.params_mut()))
            .collect();
        if let Some(c) = self.combiner.as_mut().filter(|c| c.has_param()) {
            out.push((COMBINER_PARAM.to_string(), &mut c.weight));
        }
        out.extend(self.head.iter_mut().flat_map(|l| l.params_mut()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Per-example output shape of every layer, labelled `branch/layer`,
    /// computed from shape arithmetic alone.
    pub fn declared_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        let mut features = Vec::new();
        for b in &self.branches {
            let mut shape = b.input_shape.clone();
            for layer in &b.layers {
                shape = layer.output_shape(&shape)?;
                out.push((format!("{}/{}", b.name, layer.label()), shape.clone()));
            }
            features.push(shape);
        }
        if features.len() == 2 && features[0] != features[1] {
            return Err(Error::InvalidShape(format!(
                "branch outputs must flatten to the same length to be averaged: {:?} vs {:?}",
                features[0], features[1]
            )));
        }
        let mut shape = features[0].clone();
        for layer in &self.head {
            shape = layer.output_shape(&shape)?;
            out.push((format!("head/{}", layer.label()), shape.clone()));
        }
        Ok(out)
    }

    /// Builds per-branch inputs from raw `N×C×H×W` images, applying the
    /// orthonormal per-channel Hadamard transform (in f64) where needed.
    pub fn prepare_inputs(&self, raw: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.branches
            .iter()
            .map(|b| match b.input {
                InputKind::Raw => Ok(raw.clone()),
                InputKind::Hadamard => hadamard_batch(raw),
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &[Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Config(format!(
                "{} expects {} input tensor(s), got {}",
                self.kind,
                self.branches.len(),
                inputs.len()
            )));
        }
        let n = inputs[0].shape().first().copied().unwrap_or(0);
        for (b, x) in self.branches.iter().zip(inputs) {
            let mut expected = vec![n];
            expected.extend(&b.input_shape);
            if x.shape() != expected.as_slice() {
                return Err(Error::shape(&expected, x.shape()));
            }
        }
        Ok(n)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        inputs: &[Tensor<T>],
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_inputs(inputs)?;
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut features = Vec::with_capacity(self.branches.len());
        for (b, x) in self.branches.iter().zip(inputs) {
            let (f, caches) = run_stack(&b.layers, x, training, rng)?;
            branch_caches.push(caches);
            features.push(f);
        }
        let merged = match &self.combiner {
            Some(c) => combine(&features[0], &features[1], c)?,
            None => features[0].clone(),
        };
        let (logits, head) = run_stack(&self.head, &merged, training, rng)?;
        Ok((
            logits,
            ForwardCache {
                branches: branch_caches,
                features,
                head,
            },
        ))
    }

    /// Inference-mode logits (dropout is the identity).
    pub fn logits(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        // Inference never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(inputs, false, &mut rng)?.0)
    }

    pub fn predict(&self, inputs: &[Tensor<T>]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(inputs)?))
    }

    /// Gradients for every parameter, in [`Model::parameters`] order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (g_features, head_grads) = backprop_stack(&self.head, &cache.head, grad_logits.clone(), true)?;
        let g_features = g_features.expect("head returns its input gradient");

        let (branch_grads_in, combiner_grad) = match &self.combiner {
            Some(c) => {
                let (gb, gh, gw) = combine_backward(&g_features, &cache.features[0], &cache.features[1], c)?;
                (vec![gb, gh], c.has_param().then_some(gw))
            }
            None => (vec![g_features], None),
        };

        let mut grads = Vec::new();
        for ((b, caches), g) in self.branches.iter().zip(&cache.branches).zip(branch_grads_in) {
            let (_, params) = backprop_stack(&b.layers, caches, g, false)?;
            grads.extend(params);
        }
        grads.extend(combiner_grad);
        grads.extend(head_grads);
        Ok(grads)
    }

    /// One training-mode forward/backward: `(mean loss, logits, gradients)`.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        inputs: &[Tensor<T>],
        labels: &[u8],
        rng: &mut R,
    ) -> Result<(f64, Tensor<T>, Vec<Tensor<T>>)> {
        let (logits, cache) = self.forward(inputs, true, rng)?;
        let (loss, grad) = softmax_xent_batch(&logits, labels)?;
        let grads = self.backward(&cache, &grad)?;
        Ok((loss, logits, grads))
    }

    /// Keeps the combination weight inside `[0,1]` after an update.
    pub fn clamp_combiner(&mut self) {
        if let Some(c) = self.combiner.as_mut() {
            c.clamp();
        }
    }

    /// Executes a forward pass and records each layer's per-example output
    /// shape, labelled like [`Model::declared_shapes`].
    pub fn trace_shapes(&self, inputs: &[Tensor<T>]) -> Result<Vec<(String, Vec<usize>)>> {
        self.check_inputs(inputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        let mut features = Vec::new();
        for (b, x) in self.branches.iter().zip(inputs) {
            let mut cur = x.clone();
            for layer in &b.layers {
                cur = layer.forward(&cur, false, &mut rng)?.0;
                out.push((format!("{}/{}", b.name, layer.label()), cur.shape()[1..].to_vec()));
            }
            features.push(cur);
        }
        let mut cur = match &self.combiner {
            Some(c) => combine(&features[0], &features[1], c)?,
            None => features.swap_remove(0),
        };
        for layer in &self.head {
            cur = layer.forward(&cur, false, &mut rng)?.0;
            out.push((format!("head/{}", layer.label()), cur.shape()[1..].to_vec()));
        }
        Ok(out)
    }
}

/// Per-image, per-channel orthonormal Hadamard transform of an `N×C×H×W`
/// batch, computed in f64.
pub fn hadamard_batch<T: Scalar>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = <[usize; 4]>::try_from(raw.shape())
        .map_err(|_| Error::InvalidShape(format!("expected N×C×H×W, got {:?}", raw.shape())))?;
    let per = c * h * w;
    let mut out = Vec::new();
    let mut out_shape = vec![n];
    for img in raw.data().chunks_exact(per.max(1)).take(n) {
        let t = Tensor::<f64>::from_vec(&[c, h, w], img.iter().map(|v| v.to_f64()).collect())?;
        let tr = fwht_channels(&t, true)?;
        if out_shape.len() == 1 {
            out_shape.extend(tr.shape());
        }
        out.extend(tr.data().iter().map(|&v| T::from_f64(v)));
    }
    if n == 0 {
        out_shape.extend([c, h.next_power_of_two(), w.next_power_of_two()]);
    }
    Tensor::from_vec(&out_shape, out)
}
