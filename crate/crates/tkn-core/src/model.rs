//! A materialized network: parameter tensors for every layer in a
//! [`NetworkSpec`], seeded initialization, and the forward/backward walk.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::graph::{LayerSpec, NetworkSpec};
use crate::rng::{stream, STREAM_DROPOUT, STREAM_INIT};
use crate::scalar::Scalar;
use crate::target::{TargetCache, TargetLayerState};
use crate::tensor::{
    conv2d, conv2d_backward, dense, dense_backward, dropout, dropout_backward, full_rois,
    maxpool2, maxpool2_backward, relu, relu_backward, softmax_xent, Tensor4,
};

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv { kernels: Tensor4<T> },
    Target(TargetLayerState<T>),
    MaxPool2,
    Flatten,
    Dense { weights: Tensor4<T>, bias: Vec<T> },
    Relu,
    Dropout { rate: f64 },
}

/// Per-layer forward state consumed by the backward walk.
pub enum LayerCache<T> {
    Stateless,
    Conv { input: Tensor4<T> },
    Target(TargetCache<T>),
    MaxPool2 { argmax: Vec<u32>, in_shape: (usize, usize, usize, usize) },
    Flatten { in_shape: (usize, usize, usize, usize) },
    Dense { input: Tensor4<T> },
    Relu { output: Tensor4<T> },
    /// `None` when the layer ran in eval mode (identity).
    Dropout(Option<Vec<bool>>),
}

/// Parameter-shaped gradient (or optimizer-velocity) storage: one entry per
/// layer, `Stateless` for layers without parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Stateless,
    Conv { dkernels: Tensor4<T> },
    Target { dkernels: Tensor4<T>, dparams: Vec<AttentionParams<T>> },
    Dense { dweights: Tensor4<T>, dbias: Vec<T> },
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
    pub seed: u64,
    /// One independent stream per layer slot so mask sequences do not shift
    /// when unrelated layers are added or removed.
    dropout_rngs: Vec<ChaCha8Rng>,
}

fn he_tensor<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize, usize, usize),
    fan_in: usize,
) -> Tensor4<T> {
    let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).unwrap();
    let (n, c, h, w) = shape;
    let mut t = Tensor4::zeros(n, c, h, w);
    for v in t.data_mut() {
        *v = T::from_f64(normal.sample(rng));
    }
    t
}

impl<T: Scalar> Model<T> {
    /// He-normal weights (variance 2/fan_in), zero biases, centered
    /// full-frame attention windows. Bit-reproducible per (spec, seed).
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Model<T>> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let (mut c_in, mut h, mut w) = spec.input;
        for (idx, layer) in spec.layers.iter().enumerate() {
            let mut rng = stream(seed, STREAM_INIT, idx as u64);
            layers.push(match *layer {
                LayerSpec::Conv { c_out, k } => Layer::Conv {
                    kernels: he_tensor(&mut rng, (c_out, c_in, k, k), c_in * k * k),
                },
                LayerSpec::Target { c_out, k, family, lambda, sliced } => {
                    let kernels = he_tensor(&mut rng, (c_out, c_in, k, k), c_in * k * k);
                    Layer::Target(TargetLayerState::new(kernels, family, lambda, sliced, h, w)?)
                }
                LayerSpec::MaxPool2 => Layer::MaxPool2,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { units } => Layer::Dense {
                    weights: he_tensor(&mut rng, (units, c_in, 1, 1), c_in),
                    bias: vec![T::ZERO; units],
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            });
            (c_in, h, w) = shapes[idx];
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
            seed,
            dropout_rngs: (0..spec.layers.len())
                .map(|i| stream(seed, STREAM_DROPOUT, i as u64))
                .collect(),
        })
    }

    /// Forward pass. `train` enables dropout (and advances its streams);
    /// eval mode never touches RNG state.
    pub fn forward(
        &mut self,
        input: &Tensor4<T>,
        train: bool,
    ) -> Result<(Tensor4<T>, Vec<LayerCache<T>>)> {
        let (_, c, h, w) = input.shape();
        if (c, h, w) != self.spec.input {
            return Err(Error::shape(format!(
                "input {c}x{h}x{w} does not match the network's {:?}",
                self.spec.input
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { kernels } => {
                    let out = conv2d(&cur, kernels)?;
                    caches.push(LayerCache::Conv { input: cur });
                    cur = out;
                }
                Layer::Target(st) => {
                    let (out, cache) = st.forward(&cur)?;
                    caches.push(LayerCache::Target(cache));
                    cur = out;
                }
                Layer::MaxPool2 => {
                    let in_shape = cur.shape();
                    let (out, argmax) = maxpool2(&cur)?;
                    caches.push(LayerCache::MaxPool2 { argmax, in_shape });
                    cur = out;
                }
                Layer::Flatten => {
                    let (n, c, h, w) = cur.shape();
                    caches.push(LayerCache::Flatten { in_shape: (n, c, h, w) });
                    cur = cur.reshape(n, c * h * w, 1, 1)?;
                }
                Layer::Dense { weights, bias } => {
                    let out = dense(&cur, weights, bias)?;
                    caches.push(LayerCache::Dense { input: cur });
                    cur = out;
                }
                Layer::Relu => {
                    cur = relu(&cur);
                    caches.push(LayerCache::Relu { output: cur.clone() });
                }
                Layer::Dropout { rate } => {
                    let (out, mask) = dropout(&cur, *rate, train, &mut self.dropout_rngs[idx])?;
                    caches.push(LayerCache::Dropout(mask));
                    cur = out;
                }
            }
        }
        Ok((cur, caches))
    }

    /// Backward walk over the cached forward pass. Returns dL/dinput and a
    /// gradient slot per layer.
    pub fn backward(
        &self,
        caches: Vec<LayerCache<T>>,
        dout: Tensor4<T>,
    ) -> Result<(Tensor4<T>, Vec<LayerGrads<T>>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads: Vec<LayerGrads<T>> = Vec::with_capacity(self.layers.len());
        let mut cur = dout;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let g = match (layer, cache) {
                (Layer::Conv { kernels }, LayerCache::Conv { input }) => {
                    let (_, _, h, w) = input.shape();
                    let rois = full_rois(kernels.shape().0, h, w);
                    let (dinput, dkernels) = conv2d_backward(&input, kernels, &cur, &rois)?;
                    cur = dinput;
                    LayerGrads::Conv { dkernels }
                }
                (Layer::Target(st), LayerCache::Target(cache)) => {
                    let g = st.backward(&cur, &cache)?;
                    cur = g.dinput;
                    LayerGrads::Target { dkernels: g.dkernels, dparams: g.dparams }
                }
                (Layer::MaxPool2, LayerCache::MaxPool2 { argmax, in_shape }) => {
                    cur = maxpool2_backward(&cur, &argmax, in_shape);
                    LayerGrads::Stateless
                }
                (Layer::Flatten, LayerCache::Flatten { in_shape }) => {
                    let (n, c, h, w) = in_shape;
                    cur = cur.reshape(n, c, h, w)?;
                    LayerGrads::Stateless
                }
                (Layer::Dense { weights, .. }, LayerCache::Dense { input }) => {
                    let (dinput, dweights, dbias) = dense_backward(&input, weights, &cur);
                    cur = dinput;
                    LayerGrads::Dense { dweights, dbias }
                }
                (Layer::Relu, LayerCache::Relu { output }) => {
                    cur = relu_backward(&cur, &output);
                    LayerGrads::Stateless
                }
                (Layer::Dropout { rate }, LayerCache::Dropout(mask)) => {
                    if let Some(mask) = mask {
                        cur = dropout_backward(&cur, &mask, *rate);
                    }
                    LayerGrads::Stateless
                }
                _ => return Err(Error::shape("cache kind does not match layer".to_string())),
            };
            grads.push(g);
        }
        grads.reverse();
        Ok((cur, grads))
    }

    /// Convenience: forward in train mode, then mean softmax cross-entropy.
    /// Returns (loss, per-layer grads).
    pub fn loss_and_grads(
        &mut self,
        input: &Tensor4<T>,
        labels: &[usize],
    ) -> Result<(T, Vec<LayerGrads<T>>)> {
        let (logits, caches) = self.forward(input, true)?;
        let (loss, dlogits) = softmax_xent(&logits, labels)?;
        let (_, grads) = self.backward(caches, dlogits)?;
        Ok((loss, grads))
    }

    /// Zero-filled gradient-shaped storage (the optimizer's velocity).
    pub fn zero_grads(&self) -> Vec<LayerGrads<T>> {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { kernels } => {
                    let (a, b, c, d) = kernels.shape();
                    LayerGrads::Conv { dkernels: Tensor4::zeros(a, b, c, d) }
                }
                Layer::Target(st) => {
                    let (a, b, c, d) = st.kernels.shape();
                    LayerGrads::Target {
                        dkernels: Tensor4::zeros(a, b, c, d),
                        dparams: vec![AttentionParams::zero(); st.params.len()],
                    }
                }
                Layer::Dense { weights, bias } => {
                    let (a, b, c, d) = weights.shape();
                    LayerGrads::Dense {
                        dweights: Tensor4::zeros(a, b, c, d),
                        dbias: vec![T::ZERO; bias.len()],
                    }
                }
                _ => LayerGrads::Stateless,
            })
            .collect()
    }

    /// Total learnable scalar count (kernels, dense weights and biases, and
    /// four attention parameters per targeted kernel).
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { kernels } => kernels.len() as u64,
                Layer::Target(st) => st.kernels.len() as u64 + 4 * st.params.len() as u64,
                Layer::Dense { weights, bias } => (weights.len() + bias.len()) as u64,
                _ => 0,
            })
            .sum()
    }

    pub fn num_classes(&self) -> Result<usize> {
        self.spec.num_classes()
    }

    /// True if any layer restricts its convolution by attention windows.
    pub fn has_target_layers(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Target(_)))
    }
}
