//! Dense feed-forward networks.
//!
//! Weights are stored `(out × in)`, biases as `1 × out` rows. The activation
//! applies to hidden layers only; the last layer is linear.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use super::tape::{Tape, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
    activation: Activation,
}

impl DenseNet {
    /// Uniform fan-in initialisation, `U(-1/√in, 1/√in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array2::from_shape_fn((1, fan_out), |_| {
                rng.random_range(-bound..bound)
            }));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_sizes
            .windows(2)
            .map(|p| Array2::zeros((1, p[1])))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Assemble from explicit arrays, checking every shape.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Array2<f64>>,
        biases: Vec<Array2<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(shape_err("dense layers", n, weights.len().min(biases.len())));
        }
        for (i, p) in layer_sizes.windows(2).enumerate() {
            if weights[i].dim() != (p[1], p[0]) {
                return Err(shape_err(
                    "dense weight",
                    format!("{}x{}", p[1], p[0]),
                    format!("{:?}", weights[i].dim()),
                ));
            }
            if biases[i].dim() != (1, p[1]) {
                return Err(shape_err(
                    "dense bias",
                    format!("1x{}", p[1]),
                    format!("{:?}", biases[i].dim()),
                ));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        self.biases[layer].row(0)
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, …`.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.num_layers())
            .flat_map(|i| [format!("{prefix}.l{i}.weight"), format!("{prefix}.l{i}.bias")])
            .collect()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(shape_err("mlp_forward input", self.input_dim(), input.len()));
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        Ok(self.forward_batch_unchecked(&x).into_raw_vec_and_offset().0)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(shape_err("mlp_forward input", self.input_dim(), input.ncols()));
        }
        Ok(self.forward_batch_unchecked(input))
    }

    fn forward_batch_unchecked(&self, input: &Array2<f64>) -> Array2<f64> {
        let last = self.num_layers() - 1;
        let mut h = input.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    /// Register parameters on the tape. `trainable = false` records them as
    /// constants, so gradients still flow through to the inputs but not into
    /// the weights.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNet {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundNet {
            vars,
            activation: self.activation,
            input_dim: self.input_dim(),
        }
    }

    /// Polyak averaging: `self ← (1 − rate)·self + rate·source`.
    pub fn soft_update_from(&mut self, source: &DenseNet, rate: f64) -> Result<()> {
        if self.layer_sizes != source.layer_sizes {
            return Err(shape_err(
                "soft_update",
                format!("{:?}", self.layer_sizes),
                format!("{:?}", source.layer_sizes),
            ));
        }
        if rate == 1.0 {
            self.weights.clone_from(&source.weights);
            self.biases.clone_from(&source.biases);
            return Ok(());
        }
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            dst.zip_mut_with(src, |d, &s| *d = (1.0 - rate) * *d + rate * s);
        }
        Ok(())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be at least two positive integers, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// A network whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundNet {
    vars: Vec<Var>,
    activation: Activation,
    input_dim: usize,
}

impl BoundNet {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.shape(x).1;
        if cols != self.input_dim {
            return Err(shape_err("mlp_forward input", self.input_dim, cols));
        }
        let layers = self.vars.len() / 2;
        let mut h = x;
        for i in 0..layers {
            let z = tape.matmul_t(h, self.vars[2 * i])?;
            let z = tape.add(z, self.vars[2 * i + 1])?;
            h = if i + 1 < layers {
                self.activation.on_tape(tape, z)
            } else {
                z
            };
        }
        Ok(h)
    }
}
