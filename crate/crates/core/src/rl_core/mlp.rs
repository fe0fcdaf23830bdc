//! Fixed-topology multilayer perceptron with tanh hidden layers, a linear
//! output layer and hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector; for every layer the weight matrix
//! (row-major, `n_out x n_in`) is followed by its bias vector. Gradients use
//! the same container and layout, which lets the optimizer treat both as
//! plain slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// Hidden width used by the policy and Q networks.
pub const HIDDEN_WIDTH: usize = 64;

/// Network parameters (or a gradient with identical shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpCheckpoint", try_from = "MlpCheckpoint")]
pub struct MlpParams {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

/// Activations recorded by [`MlpParams::forward_cached`]; `layers[0]` is the
/// input and the last entry is the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    /// All-zero parameters for the given layer sizes (at least two entries).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs an input and an output layer"
        );
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            values: vec![0.0; param_count(sizes)],
        }
    }

    /// `[n_in, 64, 64, n_out]`.
    pub fn standard_topology(n_in: usize, n_out: usize) -> Vec<usize> {
        vec![n_in, HIDDEN_WIDTH, HIDDEN_WIDTH, n_out]
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(sizes);
        for layer in 0..p.layer_count() {
            let (n_in, n_out) = (p.sizes[layer], p.sizes[layer + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let (w, _) = p.layer_offsets(layer);
            for v in &mut p.values[w..w + n_in * n_out] {
                *v = rng.gen_range(-limit..=limit);
            }
        }
        p
    }

    /// Multiply the output layer's weights by `gain`. A small gain yields a
    /// near-uniform initial softmax policy.
    pub fn scale_output_layer(&mut self, gain: f64) {
        let last = self.layer_count() - 1;
        let (w, b) = self.layer_offsets(last);
        for v in &mut self.values[w..b] {
            *v *= gain;
        }
    }

    pub fn from_parts(sizes: Vec<usize>, values: Vec<f64>) -> Result<Self, RlError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(RlError::Checkpoint(format!("invalid topology {sizes:?}")));
        }
        let expected = param_count(&sizes);
        if values.len() != expected {
            return Err(RlError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { sizes, values })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().expect("non-empty topology")
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offsets of a layer's weight block and bias block in the flat vector.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let w = off;
        let b = w + self.sizes[layer] * self.sizes[layer + 1];
        (w, b)
    }

    /// Weight connecting input unit `col` to output unit `row` of `layer`.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        let (w, _) = self.layer_offsets(layer);
        self.values[w + row * self.sizes[layer] + col]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        let (w, _) = self.layer_offsets(layer);
        let n_in = self.sizes[layer];
        self.values[w + row * n_in + col] = value;
    }

    pub fn bias(&self, layer: usize, row: usize) -> f64 {
        let (_, b) = self.layer_offsets(layer);
        self.values[b + row]
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, value: f64) {
        let (_, b) = self.layer_offsets(layer);
        self.values[b + row] = value;
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        debug_assert_eq!(self.sizes, other.sizes);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(self
            .forward_cached(input)?
            .layers
            .pop()
            .expect("output layer"))
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, RlError> {
        if input.len() != self.n_in() {
            return Err(RlError::DimensionMismatch {
                expected: self.n_in(),
                got: input.len(),
            });
        }
        let last = self.layer_count() - 1;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w, b) = self.layer_offsets(layer);
            let prev = &layers[layer];
            let mut out = Vec::with_capacity(n_out);
            for row in 0..n_out {
                let weights = &self.values[w + row * n_in..w + (row + 1) * n_in];
                let z = self.values[b + row]
                    + weights.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>();
                out.push(if layer == last { z } else { z.tanh() });
            }
            layers.push(out);
        }
        Ok(ForwardCache { layers })
    }

    /// Gradient of `dot(output_gradient, forward(input))` with respect to
    /// every parameter.
    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<MlpParams, RlError> {
        let cache = self.forward_cached(input)?;
        let mut grad = MlpParams::zeros(&self.sizes);
        self.backward_accumulate(&cache, output_gradient, &mut grad)?;
        Ok(grad)
    }

    /// Add the parameter gradient for one cached forward pass into `grad`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        grad: &mut MlpParams,
    ) -> Result<(), RlError> {
        if output_gradient.len() != self.n_out() {
            return Err(RlError::DimensionMismatch {
                expected: self.n_out(),
                got: output_gradient.len(),
            });
        }
        if grad.sizes != self.sizes || cache.layers.len() != self.sizes.len() {
            return Err(RlError::DimensionMismatch {
                expected: self.len(),
                got: grad.len(),
            });
        }
        let mut delta = output_gradient.to_vec();
        for layer in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w, b) = self.layer_offsets(layer);
            let prev = &cache.layers[layer];
            for (row, &d) in delta.iter().enumerate().take(n_out) {
                if d == 0.0 {
                    continue;
                }
                grad.values[b + row] += d;
                let g = &mut grad.values[w + row * n_in..w + (row + 1) * n_in];
                for (gi, x) in g.iter_mut().zip(prev) {
                    *gi += d * x;
                }
            }
            if layer > 0 {
                let mut next = vec![0.0; n_in];
                for (row, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let weights = &self.values[w + row * n_in..w + (row + 1) * n_in];
                    for (n, wv) in next.iter_mut().zip(weights) {
                        *n += d * wv;
                    }
                }
                // prev holds tanh activations of the hidden layer.
                for (n, a) in next.iter_mut().zip(prev) {
                    *n *= 1.0 - a * a;
                }
                delta = next;
            }
        }
        Ok(())
    }
}

/// On-disk form of [`MlpParams`]: layer shapes plus flat arrays of full
/// precision decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub schema_version: u32,
    /// `[n_out, n_in]` per layer.
    pub layer_shapes: Vec<[usize; 2]>,
    pub weights: Vec<Vec<String>>,
    pub biases: Vec<Vec<String>>,
}

impl MlpCheckpoint {
    pub const SCHEMA_VERSION: u32 = 1;
}

impl From<MlpParams> for MlpCheckpoint {
    fn from(p: MlpParams) -> Self {
        p.to_checkpoint()
    }
}

impl TryFrom<MlpCheckpoint> for MlpParams {
    type Error = RlError;
    fn try_from(c: MlpCheckpoint) -> Result<Self, RlError> {
        MlpParams::from_checkpoint(&c)
    }
}

impl MlpParams {
    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        let mut layer_shapes = Vec::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w, b) = self.layer_offsets(layer);
            layer_shapes.push([n_out, n_in]);
            // `Display` for f64 prints the shortest string that round-trips.
            weights.push(self.values[w..b].iter().map(|v| v.to_string()).collect());
            biases.push(
                self.values[b..b + n_out]
                    .iter()
                    .map(|v| v.to_string())
                    .collect(),
            );
        }
        MlpCheckpoint {
            schema_version: MlpCheckpoint::SCHEMA_VERSION,
            layer_shapes,
            weights,
            biases,
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self, RlError> {
        if ckpt.schema_version != MlpCheckpoint::SCHEMA_VERSION {
            return Err(RlError::SchemaVersionMismatch {
                expected: MlpCheckpoint::SCHEMA_VERSION,
                found: ckpt.schema_version,
            });
        }
        let shapes = &ckpt.layer_shapes;
        if shapes.is_empty()
            || ckpt.weights.len() != shapes.len()
            || ckpt.biases.len() != shapes.len()
        {
            return Err(RlError::Checkpoint("layer count mismatch".into()));
        }
        let mut sizes = vec![shapes[0][1]];
        for (i, s) in shapes.iter().enumerate() {
            if s[1] != *sizes.last().unwrap_or(&0) {
                return Err(RlError::Checkpoint(format!(
                    "layer {i} input width mismatch"
                )));
            }
            sizes.push(s[0]);
        }
        let parse = |s: &String| {
            s.parse::<f64>()
                .map_err(|e| RlError::Checkpoint(format!("bad number `{s}`: {e}")))
        };
        let mut values = Vec::new();
        for (i, s) in shapes.iter().enumerate() {
            if ckpt.weights[i].len() != s[0] * s[1] || ckpt.biases[i].len() != s[0] {
                return Err(RlError::Checkpoint(format!(
                    "layer {i} array length mismatch"
                )));
            }
            for v in ckpt.weights[i].iter().chain(&ckpt.biases[i]) {
                values.push(parse(v)?);
            }
        }
        let p = Self::from_parts(sizes, values)?;
        if !p.is_finite() {
            return Err(RlError::NonFinite);
        }
        Ok(p)
    }
}
