//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat array, layer by layer: the row-major weight
//! matrix (`out x in`) followed by the bias vector. Gradients, optimizer
//! moments and checkpoints all share that layout.

mod gradcheck;
mod optim;
mod target;

pub use gradcheck::{central_difference, check_gradients, GradCheckReport};
pub use optim::{apply_update, OptimizerKind, OptimizerState};
pub use target::{sync_target, TargetCopy};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::rng::{stream, stream_rng, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    seed: u64,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn default_activations(layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; layers];
    if let Some(last) = acts.last_mut() {
        *last = Activation::Identity;
    }
    acts
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig("a network needs at least input and output sizes".into()));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig("layer sizes must be positive".into()));
    }
    Ok(())
}

impl DenseNetwork {
    /// Rectifier hidden layers, identity output, uniform `±1/sqrt(fan_in)`
    /// initialization from `seed`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        Self::with_activations(sizes, &default_activations(sizes.len() - 1), seed)
    }

    pub fn with_activations(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        check_len("activations", sizes.len() - 1, activations.len())?;
        let mut rng = stream_rng(seed, stream::INIT);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / libm::sqrt(w[0] as f64);
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(uniform(&mut rng, -bound, bound));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            seed,
        })
    }

    /// Rebuild a network from checkpointed parts.
    pub fn from_parts(
        sizes: &[usize],
        activations: &[Activation],
        params: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        check_len("activations", sizes.len() - 1, activations.len())?;
        check_len("parameters", param_count(sizes), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "parameters" });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// `(weights, bias)` of one layer; weights are `out x in`, row-major.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    pub fn set_layer(&mut self, layer: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        check_len("layer weights", fan_in * fan_out, weights.len())?;
        check_len("layer bias", fan_out, bias.len())?;
        let off = self.layer_offset(layer);
        self.params[off..off + fan_in * fan_out].copy_from_slice(weights);
        self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].copy_from_slice(bias);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Forward pass that keeps every layer's pre- and post-activation values
    /// for a later [`backward_cached`](Self::backward_cached).
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        check_len("network input", self.input_dim(), input.len())?;
        let layers = self.n_layers();
        cache.post.resize_with(layers + 1, Vec::new);
        cache.pre.resize_with(layers, Vec::new);
        cache.post[0].clear();
        cache.post[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let (head, tail) = cache.post.split_at_mut(l + 1);
            let x = &head[l];
            let pre = &mut cache.pre[l];
            pre.clear();
            pre.extend_from_slice(b);
            for (o, row) in pre.iter_mut().zip(w.chunks_exact(fan_in)) {
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *o += acc;
            }
            let act = self.activations[l];
            let post = &mut tail[0];
            post.clear();
            post.extend(pre.iter().map(|&z| act.apply(z)));
        }
        Ok(&cache.post[layers])
    }

    /// Parameter gradients of a scalar loss whose gradient with respect to
    /// the network output is `output_gradient`.
    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<Gradients> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_cached(&cache, output_gradient, &mut grads, None)?;
        grads.ensure_finite()?;
        Ok(grads)
    }

    /// Accumulates (`+=`) parameter gradients into `grads` using the values
    /// stored by the preceding `forward_cached` call. When `input_gradient`
    /// is given it receives the gradient with respect to the input.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        grads: &mut Gradients,
        input_gradient: Option<&mut Vec<f64>>,
    ) -> Result<()> {
        check_len("output gradient", self.output_dim(), output_gradient.len())?;
        check_len("gradient buffer", self.n_params(), grads.values.len())?;
        let layers = self.n_layers();
        if cache.pre.len() < layers {
            return Err(Error::Shape {
                what: "forward cache",
                expected: layers,
                found: cache.pre.len(),
            });
        }
        let mut delta: Vec<f64> = output_gradient.to_vec();
        let mut off = self.n_params();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= fan_in * fan_out + fan_out;
            let act = self.activations[l];
            for ((d, &z), &a) in delta.iter_mut().zip(&cache.pre[l]).zip(&cache.post[l + 1]) {
                *d *= act.derivative(z, a);
            }
            let x = &cache.post[l];
            let (gw, gb) = grads.values[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, &xi) in row.iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
            }
            if l > 0 || input_gradient.is_some() {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
                delta = prev;
            }
        }
        if let Some(ig) = input_gradient {
            ig.clear();
            ig.extend_from_slice(&delta);
        }
        Ok(())
    }

    /// Gradient of the output functional `output_gradient · f(input)` with
    /// respect to the input.
    pub fn input_gradient(&self, input: &[f64], output_gradient: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        let mut grads = Gradients::zeros_like(self);
        let mut ig = Vec::new();
        self.backward_cached(&cache, output_gradient, &mut grads, Some(&mut ig))?;
        Ok(ig)
    }
}

/// Reusable activation storage for forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Flat gradient buffer laid out like [`DenseNetwork::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    sizes: Vec<usize>,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            sizes: net.sizes.clone(),
            values: vec![0.0; net.n_params()],
        }
    }

    pub fn from_values(sizes: &[usize], values: Vec<f64>) -> Result<Self> {
        check_len("gradients", param_count(sizes), values.len())?;
        Ok(Self {
            sizes: sizes.to_vec(),
            values,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.values.iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { what: "gradients" })
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&g| g == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> DenseNetwork {
        let mut net = DenseNetwork::new(&[2, 2], 0).unwrap();
        net.set_layer(0, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        assert_eq!(identity_net().forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut net = DenseNetwork::new(&[3, 1], 9).unwrap();
        net.set_layer(0, &[0.0, 0.0, 0.0], &[0.5]).unwrap();
        assert_eq!(net.forward(&[4.0, -1.0, 7.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn seeded_two_layer_matches_hand_arithmetic() {
        let net = DenseNetwork::new(&[2, 3, 2], 42).unwrap();
        let (w1, b1) = net.layer(0);
        let (w2, b2) = net.layer(1);
        let x = [1.0, 0.0];
        // straight-line evaluation of relu(W1 x + b1) then W2 h + b2
        let mut h = [0.0f64; 3];
        for o in 0..3 {
            let z = w1[o * 2] * x[0] + w1[o * 2 + 1] * x[1] + b1[o];
            h[o] = if z > 0.0 { z } else { 0.0 };
        }
        let mut y = [0.0f64; 2];
        for o in 0..2 {
            y[o] = w2[o * 3] * h[0] + w2[o * 3 + 1] * h[1] + w2[o * 3 + 2] * h[2] + b2[o];
        }
        assert_eq!(net.forward(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = DenseNetwork::new(&[3, 4, 2], 1).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::Shape { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut net = DenseNetwork::new(&[1, 1], 0).unwrap();
        net.set_layer(0, &[0.7], &[0.0]).unwrap();
        let g = net.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.values, vec![2.0, 1.0]);
    }

    #[test]
    fn bias_gradient_is_output_gradient() {
        let mut net = DenseNetwork::new(&[2, 1], 0).unwrap();
        net.set_layer(0, &[0.0, 0.0], &[1.0]).unwrap();
        let g = net.backward(&[0.0, 0.0], &[3.0]).unwrap();
        assert_eq!(g.values[2], 3.0);
    }

    #[test]
    fn initialization_is_bounded_by_fan_in() {
        let net = DenseNetwork::new(&[16, 8, 4], 3).unwrap();
        let (w, _) = net.layer(0);
        assert!(w.iter().all(|x| x.abs() <= 0.25));
        let (w, _) = net.layer(1);
        let bound = 1.0 / libm::sqrt(8.0);
        assert!(w.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn from_parts_rejects_bad_lengths_and_nan() {
        let acts = [Activation::Identity];
        assert!(DenseNetwork::from_parts(&[2, 1], &acts, vec![0.0; 2], 0).is_err());
        assert!(DenseNetwork::from_parts(&[2, 1], &acts, vec![0.0, f64::NAN, 0.0], 0).is_err());
        assert!(DenseNetwork::from_parts(&[2, 1], &acts, vec![0.0; 3], 0).is_ok());
    }

    #[test]
    fn input_gradient_of_linear_map_is_weight_row() {
        let mut net = DenseNetwork::new(&[3, 1], 0).unwrap();
        net.set_layer(0, &[1.0, -2.0, 0.5], &[0.3]).unwrap();
        assert_eq!(net.input_gradient(&[9.0, 9.0, 9.0], &[2.0]).unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn shape_closure_across_depths() {
        for depth in 1..5 {
            let mut sizes = vec![5];
            sizes.extend(core::iter::repeat(7).take(depth));
            sizes.push(3);
            let net = DenseNetwork::new(&sizes, depth as u64).unwrap();
            assert_eq!(net.forward(&[0.1; 5]).unwrap().len(), 3);
        }
    }
}
