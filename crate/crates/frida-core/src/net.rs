//! Feed-forward dense networks with hand-rolled reverse-mode gradients.
//!
//! Every model in the crate is built from `DenseNet`s (possibly single-layer
//! ones used as classifier heads). The computation graphs are small and
//! fixed, so backprop is written out directly instead of going through a
//! general tape; `forward_cached` keeps the per-layer activations a
//! `backward` call needs.

use alloc::vec::Vec;

use crate::error::{FridaError, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor2;

/// Activation applied after a dense layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Leaky ReLU with slope 0.2 on the negative side.
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.2 * x
                }
            }
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative in terms of the pre-activation value.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.2
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(pre);
                1.0 - t * t
            }
        }
    }
}

/// One dense layer: `y = act(x * w + b)`, `w` is `in x out`, `b` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor2,
    pub b: Tensor2,
    pub act: Activation,
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations recorded during `forward_cached`.
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i`; `inputs[len]` is the output.
    inputs: Vec<Tensor2>,
    /// `preacts[i]` is layer `i`'s affine output before its activation.
    preacts: Vec<Tensor2>,
}

impl ForwardCache {
    /// Final network output.
    pub fn output(&self) -> &Tensor2 {
        self.inputs.last().expect("cache holds at least the input")
    }
}

/// Parameter gradients mirroring a `DenseNet`'s layer list.
#[derive(Debug, Clone)]
pub struct NetGrads {
    /// Per layer `(d_w, d_b)`.
    pub layers: Vec<(Tensor2, Tensor2)>,
}

impl NetGrads {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &DenseNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| {
                (
                    Tensor2::zeros(l.w.rows(), l.w.cols()),
                    Tensor2::zeros(l.b.rows(), l.b.cols()),
                )
            })
            .collect();
        NetGrads { layers }
    }

    /// Accumulate another gradient set of the same shape.
    pub fn add_assign(&mut self, other: &NetGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(FridaError::Contract("gradient layer counts differ".into()));
        }
        for ((dw, db), (ow, ob)) in self.layers.iter_mut().zip(other.layers.iter()) {
            dw.add_assign(ow)?;
            db.add_assign(ob)?;
        }
        Ok(())
    }

    /// Flat view over all gradient tensors, layer order then (w, b).
    pub fn tensors(&self) -> Vec<&Tensor2> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (dw, db) in &self.layers {
            out.push(dw);
            out.push(db);
        }
        out
    }
}

impl DenseNet {
    /// Build from explicit layers; adjacent dimensions must chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(FridaError::Contract(
                "DenseNet needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].w.cols() != pair[1].w.rows() {
                return Err(FridaError::Shape {
                    context: "DenseNet::from_layers",
                    expected: (pair[0].w.cols(), 0),
                    got: (pair[1].w.rows(), pair[1].w.cols()),
                });
            }
        }
        for l in &layers {
            if l.b.rows() != 1 || l.b.cols() != l.w.cols() {
                return Err(FridaError::Shape {
                    context: "DenseNet::from_layers bias",
                    expected: (1, l.w.cols()),
                    got: (l.b.rows(), l.b.cols()),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    /// Random initialization: weights uniform in `+-1/sqrt(fan_in)`, zero biases.
    ///
    /// `dims` lists `input_dim` followed by each layer's output dim;
    /// `acts[i]` is layer `i`'s activation.
    pub fn init(dims: &[usize], acts: &[Activation], rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(FridaError::Contract(
                "DenseNet::init dims/acts mismatch".into(),
            ));
        }
        let mut layers = Vec::with_capacity(acts.len());
        for (i, &act) in acts.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(FridaError::Contract("zero-width layer".into()));
            }
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let mut w = Tensor2::zeros(fan_in, fan_out);
            for v in w.data_mut().iter_mut() {
                *v = rng.next_symmetric(bound);
            }
            layers.push(DenseLayer {
                w,
                b: Tensor2::zeros(1, fan_out),
                act,
            });
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, idx: usize) -> Option<&mut DenseLayer> {
        self.layers.get_mut(idx)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.cols()
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.cols())
            .sum()
    }

    /// Immutable parameter tensors, layer order then (w, b).
    pub fn params(&self) -> Vec<&Tensor2> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    /// Mutable parameter tensors, same order as `params`.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    /// Forward pass. Pure: same input, same output.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = self.layer_forward(layer, &cur)?;
        }
        Ok(cur)
    }

    fn layer_forward(&self, layer: &DenseLayer, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != layer.w.rows() {
            return Err(FridaError::Shape {
                context: "DenseNet::forward",
                expected: (x.rows(), layer.w.rows()),
                got: (x.rows(), x.cols()),
            });
        }
        let mut pre = x.matmul(&layer.w)?;
        pre.add_row(&layer.b)?;
        for v in pre.data_mut().iter_mut() {
            *v = layer.act.apply(*v);
        }
        Ok(pre)
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward_cached(&self, x: &Tensor2) -> Result<ForwardCache> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for layer in &self.layers {
            let cur = inputs.last().expect("nonempty");
            if cur.cols() != layer.w.rows() {
                return Err(FridaError::Shape {
                    context: "DenseNet::forward_cached",
                    expected: (cur.rows(), layer.w.rows()),
                    got: (cur.rows(), cur.cols()),
                });
            }
            let mut pre = cur.matmul(&layer.w)?;
            pre.add_row(&layer.b)?;
            let mut post = pre.clone();
            for v in post.data_mut().iter_mut() {
                *v = layer.act.apply(*v);
            }
            preacts.push(pre);
            inputs.push(post);
        }
        Ok(ForwardCache { inputs, preacts })
    }

    /// Backpropagate `grad_out` (gradient w.r.t. the network output).
    ///
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor2,
    ) -> Result<(NetGrads, Tensor2)> {
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[i];
            if delta.rows() != pre.rows() || delta.cols() != pre.cols() {
                return Err(FridaError::Shape {
                    context: "DenseNet::backward",
                    expected: (pre.rows(), pre.cols()),
                    got: (delta.rows(), delta.cols()),
                });
            }
            // through the activation
            for (d, &p) in delta.data_mut().iter_mut().zip(pre.data().iter()) {
                *d *= layer.act.derivative(p);
            }
            let input = &cache.inputs[i];
            grads.layers[i].0 = input.t_matmul(&delta)?;
            grads.layers[i].1 = delta.col_sums();
            delta = delta.matmul_t(&layer.w)?;
        }
        Ok((grads, delta))
    }
}
