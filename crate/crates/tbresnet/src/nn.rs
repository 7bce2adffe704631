//! Feedforward network with ReLU hidden layers and an affine output layer.
//!
//! Layer `l` maps `a` to `W[l] a + b[l]` with `W[l]` of shape
//! `dims[l+1] x dims[l]`. Every forward path, batch or single row, runs the
//! same per-row loop with left-to-right accumulation, so batch evaluation and
//! row evaluation agree bitwise. The subgradient at a ReLU kink is zero.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    /// weights[l] has shape (dims[l+1], dims[l]).
    weights: Vec<Array2<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Flat serialized form; weight matrices are row-major.
#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<MlpParams> for MlpRepr {
    fn from(p: MlpParams) -> Self {
        MlpRepr {
            layer_dims: p.layer_dims,
            weights: p
                .weights
                .into_iter()
                .map(|w| w.into_iter().collect())
                .collect(),
            biases: p.biases,
        }
    }
}

impl TryFrom<MlpRepr> for MlpParams {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        validate_dims(&r.layer_dims)?;
        let n_layers = r.layer_dims.len() - 1;
        if r.weights.len() != n_layers || r.biases.len() != n_layers {
            return Err(Error::data("layer count does not match layer_dims"));
        }
        let mut weights = Vec::with_capacity(n_layers);
        for (l, flat) in r.weights.into_iter().enumerate() {
            let shape = (r.layer_dims[l + 1], r.layer_dims[l]);
            if r.biases[l].len() != shape.0 {
                return Err(Error::data(format!("layer {l}: bias length mismatch")));
            }
            let w = Array2::from_shape_vec(shape, flat)
                .map_err(|_| Error::data(format!("layer {l}: weight length mismatch")))?;
            weights.push(w);
        }
        Ok(MlpParams {
            layer_dims: r.layer_dims,
            weights,
            biases: r.biases,
        })
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config(
            "network needs at least an input and an output layer",
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config("zero-width layer"));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform initialization: each weight uniform on
    /// `[-sqrt(6 / (fan_in + fan_out)), +...]`, biases zero. Weights are
    /// drawn layer by layer in row-major order.
    pub fn glorot(layer_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_out, fan_in) = (layer_dims[l + 1], layer_dims[l]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..a));
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = (0..layer_dims.len() - 1)
            .map(|l| Array2::zeros((layer_dims[l + 1], layer_dims[l])))
            .collect();
        let biases = (0..layer_dims.len() - 1)
            .map(|l| vec![0.0; layer_dims[l + 1]])
            .collect();
        Ok(MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit layer matrices. `weights[l]` must have
    /// shape (dims[l+1], dims[l]) and pair with `biases[l]`.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::config("need one bias vector per weight matrix"));
        }
        let mut layer_dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != layer_dims[l] {
                return Err(Error::config(format!("layer {l}: input width mismatch")));
            }
            if b.len() != w.nrows() {
                return Err(Error::config(format!("layer {l}: bias length mismatch")));
            }
            layer_dims.push(w.nrows());
        }
        validate_dims(&layer_dims)?;
        Ok(MlpParams {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn affine_into(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let w = &self.weights[l];
        out.clear();
        for (row, b) in w.rows().into_iter().zip(&self.biases[l]) {
            let mut acc = *b;
            for (wij, xj) in row.iter().zip(input) {
                acc += wij * xj;
            }
            out.push(acc);
        }
    }

    /// Network output for one input row.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cache(input).into_output()
    }

    /// Forward pass keeping post-activation values for backprop.
    pub fn forward_cache(&self, input: &[f64]) -> MlpCache {
        debug_assert_eq!(input.len(), self.n_inputs());
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut out = Vec::new();
        for l in 0..n_layers {
            self.affine_into(l, activations.last().expect("nonempty"), &mut out);
            if l + 1 < n_layers {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(std::mem::take(&mut out));
        }
        MlpCache { activations }
    }

    /// Outputs for every row of an N x d matrix, as N x k.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.nrows(), self.n_outputs()));
        let mut row_buf = Vec::with_capacity(self.n_inputs());
        for (i, row) in inputs.rows().into_iter().enumerate() {
            row_buf.clear();
            row_buf.extend(row.iter().copied());
            let v = self.forward(&row_buf);
            for (j, vj) in v.iter().enumerate() {
                out[[i, j]] = *vj;
            }
        }
        out
    }

    /// Backpropagates `upstream = dL/d(output)` through the cached pass,
    /// accumulating parameter gradients into `grads` and returning
    /// `dL/d(input)`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.n_outputs());
        let n_layers = self.weights.len();
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                // Hidden layer: gate by ReLU activity. Post-activation zero
                // covers both the negative side and the kink itself.
                for (d, &a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let below = &cache.activations[l];
            let gw = &mut grads.weights[l];
            for (i, &di) in delta.iter().enumerate() {
                grads.biases[l][i] += di;
                for (j, &aj) in below.iter().enumerate() {
                    gw[[i, j]] += di * aj;
                }
            }
            let w = &self.weights[l];
            let mut next = vec![0.0; below.len()];
            for (i, &di) in delta.iter().enumerate() {
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += w[[i, j]] * di;
                }
            }
            delta = next;
        }
        delta
    }

    /// Gradient of the output functional `sum_k upstream_k * v_k` with
    /// respect to the input row, without touching parameter gradients.
    pub fn input_gradient(&self, cache: &MlpCache, upstream: &[f64]) -> Vec<f64> {
        let mut scratch = MlpGrads::zeros_like(self);
        self.backward_into(cache, upstream, &mut scratch)
    }

    /// All parameters as one vector: per layer, weights row-major then
    /// biases. Gradient vectors from `MlpGrads::to_flat` use the same order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for wi in w.iter_mut() {
                *wi = *it.next().expect("length checked");
            }
            for bi in b.iter_mut() {
                *bi = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// In-place step `theta += scale * grads`.
    pub fn apply_step(&mut self, grads: &MlpGrads, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.zip_mut_with(g, |w, g| *w += scale * g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi += scale * gi;
            }
        }
    }
}

/// Post-activation values of one forward pass; `activations[0]` is the input
/// and the last entry is the network output.
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("nonempty")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().expect("nonempty")
    }
}

/// Parameter gradients with the same shape as the network.
pub struct MlpGrads {
    weights: Vec<Array2<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        MlpGrads {
            weights: p.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Same flat layout as `MlpParams::to_flat`.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>();
        let mut out = Vec::with_capacity(n);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for w in &self.weights {
            s += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            s += b.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }
}

/// Endless mini-batch index stream. Each epoch is a fresh Fisher-Yates
/// shuffle; the trailing short batch of an epoch is yielded as-is before the
/// next shuffle.
pub struct BatchStream<R: Rng> {
    indices: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: R,
}

impl<R: Rng> BatchStream<R> {
    pub fn new(n: usize, batch_size: usize, rng: R) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::config("batch stream needs n > 0 and batch > 0"));
        }
        let mut s = BatchStream {
            indices: (0..n).collect(),
            pos: 0,
            batch_size: batch_size.min(n),
            rng,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        for i in (1..self.indices.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.indices.swap(i, j);
        }
        self.pos = 0;
    }

    /// Fills `out` with the next batch of row indices.
    pub fn next_batch(&mut self, out: &mut Vec<usize>) {
        if self.pos >= self.indices.len() {
            self.shuffle();
        }
        let end = (self.pos + self.batch_size).min(self.indices.len());
        out.clear();
        out.extend_from_slice(&self.indices[self.pos..end]);
        self.pos = end;
    }
}
