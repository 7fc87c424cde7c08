use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{FlstError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
    Linear,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Softmax => 2,
            Activation::Linear => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Softmax),
            3 => Some(Activation::Linear),
            _ => None,
        }
    }

    fn apply(self, z: &mut Matrix) {
        match self {
            Activation::Relu => z.map_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.map_inplace(f64::tanh),
            Activation::Linear => {}
            Activation::Softmax => {
                for r in 0..z.rows() {
                    softmax_in_place(z.row_mut(r));
                }
            }
        }
    }

    /// Converts a gradient w.r.t. this activation's output into one w.r.t. its input,
    /// given the cached output `a`.
    fn backprop(self, a: &Matrix, grad: &mut Matrix) {
        match self {
            Activation::Linear => {}
            Activation::Relu => {
                for (g, &y) in grad.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &y) in grad.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Softmax => {
                for r in 0..a.rows() {
                    let p = a.row(r);
                    let g = grad.row_mut(r);
                    let dot: f64 = g.iter().zip(p).map(|(x, y)| x * y).sum();
                    for (gi, &pi) in g.iter_mut().zip(p) {
                        *gi = pi * (*gi - dot);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Dense feedforward network. `weights[k]` maps layer `k` to layer `k + 1` and is
/// stored as `layer_sizes[k+1] × layer_sizes[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activations: Vec<Activation>,
}

/// Post-activation outputs of every layer, input first.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layers: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.layers.last().expect("cache always holds the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.layers[0]
    }

    pub fn layer(&self, k: usize) -> &Matrix {
        &self.layers[k]
    }

    pub fn into_output(mut self) -> Matrix {
        self.layers.pop().expect("cache always holds the input")
    }
}

/// Gradients shape-matched to an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientSet {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        interleave(&self.weights, &self.biases)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        interleave_mut(&mut self.weights, &mut self.biases)
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, k: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self
                .weights
                .iter()
                .zip(&net.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self
                .biases
                .iter()
                .zip(&net.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}

fn interleave<'a>(w: &'a [Matrix], b: &'a [Vec<f64>]) -> Vec<&'a [f64]> {
    w.iter()
        .zip(b)
        .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
        .collect()
}

fn interleave_mut<'a>(w: &'a mut [Matrix], b: &'a mut [Vec<f64>]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(w.len() * 2);
    for (w, b) in w.iter_mut().zip(b.iter_mut()) {
        out.push(w.as_mut_slice());
        out.push(b.as_mut_slice());
    }
    out
}

/// Where a supplied backward gradient attaches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientAt {
    /// Gradient w.r.t. the network output (post-activation).
    Output,
    /// Gradient w.r.t. the final layer's pre-activation (e.g. softmax logits).
    Logits,
}

impl Mlp {
    /// Builds a network with weights drawn from `U(-1/√fan_in, 1/√fan_in)` and zero biases.
    pub fn new(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        validate_architecture(layer_sizes, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Assembles a network from explicit parameters.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        validate_architecture(&layer_sizes, &activations)?;
        if weights.len() != layer_sizes.len() - 1 || biases.len() != weights.len() {
            return Err(FlstError::shape("parameter count does not match layers"));
        }
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            if weights[k].shape() != (pair[1], pair[0]) || biases[k].len() != pair[1] {
                return Err(FlstError::shape(format!(
                    "layer {} parameters do not match sizes {}->{}",
                    k, pair[0], pair[1]
                )));
            }
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            activations,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter blocks in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn slices(&self) -> Vec<&[f64]> {
        interleave(&self.weights, &self.biases)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        interleave_mut(&mut self.weights, &mut self.biases)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.activations == other.activations
    }

    /// FNV-1a over the parameter bit patterns; equal checksums for bitwise-equal nets.
    pub fn checksum(&self) -> u64 {
        let mut h = super::checkpoint::Fnv64::new();
        for s in self.slices() {
            for v in s {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(FlstError::shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.weights.len() + 1);
        layers.push(batch.clone());
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = layers.last().unwrap().matmul_transposed(w)?;
            for r in 0..z.rows() {
                for (v, bias) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                }
            }
            act.apply(&mut z);
            layers.push(z);
        }
        Ok(ForwardCache { layers })
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.into_output())
    }

    /// Exact gradients of a scalar loss given its gradient w.r.t. the network output.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<GradientSet> {
        self.backward_full(cache, output_grad, GradientAt::Output, false)
            .map(|(g, _)| g)
    }

    /// Backpropagation returning parameter gradients and, when `want_input` is set,
    /// the gradient w.r.t. the network input.
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        grad: &Matrix,
        at: GradientAt,
        want_input: bool,
    ) -> Result<(GradientSet, Option<Matrix>)> {
        self.check_cache(cache)?;
        let out = cache.output();
        if grad.shape() != out.shape() {
            return Err(FlstError::shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad.shape(),
                out.shape()
            )));
        }
        let depth = self.weights.len();
        let mut weight_grads = vec![Matrix::zeros(0, 0); depth];
        let mut bias_grads = vec![Vec::new(); depth];
        let mut delta = grad.clone();
        if at == GradientAt::Output {
            self.activations[depth - 1].backprop(out, &mut delta);
        }
        let mut input_grad = None;
        for k in (0..depth).rev() {
            let below = &cache.layers[k];
            weight_grads[k] = delta.transpose_matmul(below)?;
            bias_grads[k] = delta.column_sums();
            if k > 0 || want_input {
                let mut next = delta.matmul(&self.weights[k])?;
                if k > 0 {
                    self.activations[k - 1].backprop(below, &mut next);
                    delta = next;
                } else {
                    input_grad = Some(next);
                }
            }
        }
        Ok((
            GradientSet {
                weights: weight_grads,
                biases: bias_grads,
            },
            input_grad,
        ))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.layers.len() == self.layer_sizes.len()
            && cache
                .layers
                .iter()
                .zip(&self.layer_sizes)
                .all(|(m, &n)| m.cols() == n)
            && cache
                .layers
                .iter()
                .all(|m| m.rows() == cache.layers[0].rows());
        if ok {
            Ok(())
        } else {
            Err(FlstError::shape(
                "cached activations were not produced by this network",
            ))
        }
    }
}

fn validate_architecture(layer_sizes: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(FlstError::config(format!(
            "a network needs at least 2 layers, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(FlstError::config("layer sizes must be positive"));
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(FlstError::config(format!(
            "{} activations given for {} layer transitions",
            activations.len(),
            layer_sizes.len() - 1
        )));
    }
    if activations[..activations.len() - 1].contains(&Activation::Softmax) {
        return Err(FlstError::config(
            "softmax is only allowed at the output layer",
        ));
    }
    Ok(())
}
