use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{shape_err, GllError, Result};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Affine map `y = x W^T + b` followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Fully connected network. Every parameter update bumps a generation
/// counter so that caches from an older forward pass are rejected.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    model: u64,
    generation: u64,
    /// Inputs of every layer, then the final output.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().expect("cache holds at least the input")
    }
}

/// Parameter gradients with the network's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: m.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
        let b: f64 = self.biases.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum();
        (w + b).sqrt()
    }
}

impl Mlp {
    /// Kaiming-uniform weights, zero biases, ReLU on every layer but the last.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(GllError::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let depth = sizes.len() - 1;
        let layers = (0..depth)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(fan_out),
                    activation: if l + 1 == depth {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GllError::InvalidArgument("network needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(shape_err(
                    format!("bias of length {} in layer {l}", layer.fan_out()),
                    layer.bias.len(),
                ));
            }
            if l > 0 && layers[l - 1].fan_out() != layer.fan_in() {
                return Err(shape_err(
                    format!("layer {l} input width {}", layers[l - 1].fan_out()),
                    layer.fan_in(),
                ));
            }
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(GllError::InvalidData(format!("non-finite parameter in layer {l}")));
            }
        }
        Ok(Self {
            layers,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Layer::fan_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = inputs.last().unwrap().dot(&layer.weight.t()) + &layer.bias;
            let a = match layer.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            pre.push(z);
            inputs.push(a);
        }
        let out = inputs.last().unwrap().clone();
        Ok((
            out,
            MlpCache {
                model: self.id,
                generation: self.generation,
                inputs,
                pre,
            },
        ))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = a.dot(&layer.weight.t()) + &layer.bias;
            if layer.activation == Activation::Relu {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the inputs.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.model != self.id || cache.generation != self.generation {
            return Err(GllError::StaleCache {
                model: self.generation,
                cache: cache.generation,
            });
        }
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(shape_err(
                format!("{}x{} output gradient", out.nrows(), out.ncols()),
                format!("{}x{}", grad_out.nrows(), grad_out.ncols()),
            ));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta).and(&cache.pre[l]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads.weights[l] = delta.t().dot(&cache.inputs[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weight);
        }
        Ok((grads, delta))
    }

    /// `param -= lr * grad`-style update applied through a closure per tensor.
    pub fn update<F>(&mut self, grads: &MlpGrads, mut step: F)
    where
        F: FnMut(usize, ndarray::ArrayViewMut1<f64>, ndarray::ArrayView1<f64>),
    {
        let mut slot = 0;
        for (l, layer) in self.layers_mut().iter_mut().enumerate() {
            let w_len = layer.weight.len();
            let w = layer.weight.view_mut().into_shape_with_order(w_len).expect("contiguous weights");
            let gw = grads.weights[l].view().into_shape_with_order(w_len).expect("contiguous gradients");
            step(slot, w, gw);
            slot += 1;
            step(slot, layer.bias.view_mut(), grads.biases[l].view());
            slot += 1;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}
