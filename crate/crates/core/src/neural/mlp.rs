use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::rng_for;
use crate::io::{read_to_string, write_atomic};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "mlp-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Plain feed-forward network `l_M ∘ … ∘ l_1`, `l_m(y) = σ_m(A_m y + b_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    input_dim: usize,
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    /// Row-major `out × in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Random initialization, uniform in `±1/√fan_in` from a seeded ChaCha stream.
    pub fn new(input_dim: usize, spec: &[(usize, Activation)], seed: u64) -> Self {
        let mut rng = rng_for(seed, 7);
        let mut fan_in = input_dim;
        let layers = spec
            .iter()
            .map(|&(width, activation)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((width, fan_in), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(width, |_| rng.random_range(-bound..bound));
                fan_in = width;
                Layer { weights, bias, activation }
            })
            .collect();
        Mlp { input_dim, layers }
    }

    /// Identity input layer of width 2, `depth` sigmoid layers of `width`
    /// neurons and an identity output layer.
    pub fn layout(width: usize, depth: usize, out: usize) -> Vec<(usize, Activation)> {
        let mut spec = vec![(2, Activation::Identity)];
        spec.extend(std::iter::repeat_n((width, Activation::Sigmoid), depth));
        spec.push((out, Activation::Identity));
        spec
    }

    /// `[2, 100, 100, out]` with identity/sigmoid/sigmoid/identity activations.
    pub fn reference(out: usize, seed: u64) -> Self {
        Self::new(2, &Self::layout(100, 2, out), seed)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::out_dim).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Parameters in layer order, weights row-major before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = p[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Single-point evaluation.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = x.to_vec();
        for l in &self.layers {
            a = l
                .weights
                .outer_iter()
                .zip(l.bias.iter())
                .map(|(row, b)| l.activation.apply(row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b))
                .collect();
        }
        a
    }

    /// Batched evaluation, one input per row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for l in &self.layers {
            let mut z = a.dot(&l.weights.t());
            z += &l.bias.view().insert_axis(Axis(0));
            if l.activation != Activation::Identity {
                z.mapv_inplace(|v| l.activation.apply(v));
            }
            a = z;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let mut fan_in = self.input_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.in_dim() != fan_in || l.bias.len() != l.out_dim() {
                return Err(Error::ModelMismatch(format!("layer {k} dimensions do not chain")));
            }
            fan_in = l.out_dim();
        }
        if !self.is_finite() {
            return Err(Error::ModelMismatch("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            input_dim: self.input_dim,
            layer_dims: self.layer_dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            weights: self.layers.iter().map(|l| l.weights.iter().copied().collect()).collect(),
            biases: self.layers.iter().map(|l| l.bias.to_vec()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelMismatch(format!("malformed model file: {e}")))?;
        if f.format != MODEL_FORMAT {
            return Err(Error::ModelMismatch(format!("unsupported model format '{}'", f.format)));
        }
        let n = f.layer_dims.len();
        if f.activations.len() != n || f.weights.len() != n || f.biases.len() != n {
            return Err(Error::ModelMismatch("per-layer arrays have inconsistent lengths".into()));
        }
        let mut fan_in = f.input_dim;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let out = f.layer_dims[k];
            let weights = Array2::from_shape_vec((out, fan_in), f.weights[k].clone()).map_err(|_| {
                Error::ModelMismatch(format!("layer {k}: expected {out}×{fan_in} weights, found {}", f.weights[k].len()))
            })?;
            if f.biases[k].len() != out {
                return Err(Error::ModelMismatch(format!("layer {k}: expected {out} biases")));
            }
            layers.push(Layer { weights, bias: Array1::from(f.biases[k].clone()), activation: f.activations[k] });
            fan_in = out;
        }
        let net = Mlp { input_dim: f.input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json();
        write_atomic(path, |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}
