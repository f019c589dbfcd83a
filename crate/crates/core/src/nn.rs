//! Dense feed-forward networks shared by conditioners, critics and the
//! surrogate classifier.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Anything with an ordered list of parameter tensors.
///
/// The order is fixed for the lifetime of the value; optimizers, checkpoints
/// and finite-difference tests all rely on it.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn parameter_names(&self) -> Vec<String>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.parameters_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: &Var) -> Result<Var> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

/// Multilayer perceptron with a linear output layer.
///
/// Weights are stored as `[fan_in, fan_out]` so a batch `[n, fan_in]`
/// multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    activation: Activation,
}

impl Mlp {
    /// `widths` lists every layer extent including input and output.
    /// With `zero_output` the last layer starts at zero, so the network
    /// initially outputs exactly 0.
    pub fn new(widths: &[usize], activation: Activation, zero_output: bool, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        let n_layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let data = if zero_output && l == n_layers - 1 {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect()
            };
            weights.push(Tensor::from_parts(vec![fan_in, fan_out], data));
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    pub fn from_layers(layers: Vec<(Tensor, Tensor)>, activation: Activation) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for (w, b) in &layers {
            let (fan_in, fan_out) = match w.shape() {
                &[i, o] => (i, o),
                s => return Err(Error::shape("mlp", format!("weight shape {s:?}"))),
            };
            if b.shape() != [fan_out] || prev.is_some_and(|p| p != fan_in) {
                return Err(Error::shape("mlp", "inconsistent layer shapes"));
            }
            prev = Some(fan_out);
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one layer".into()));
        }
        let (weights, biases) = layers.into_iter().unzip();
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weights[self.weights.len() - 1].shape()[1]
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.weights.iter().map(|t| t.shape()[1]));
        w
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Places the parameters on `tape`; `trainable` controls whether
    /// gradients flow into them.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| (tape.leaf(w.clone(), trainable), tape.leaf(b.clone(), trainable)))
                .collect(),
            activation: self.activation,
        }
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        (0..self.weights.len())
            .flat_map(|l| [format!("w{l}"), format!("b{l}")])
            .collect()
    }
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, x: &Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if l != last {
                h = self.activation.apply(&h)?;
            }
        }
        Ok(h)
    }

    /// Parameter handles in [`Parameterized`] order.
    pub fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }
}
