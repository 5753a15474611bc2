//! Multi-layer perceptrons over the tape.
//!
//! `widths` lists every layer's output size, the last entry being the output
//! dimension. Hidden layers use tanh; the output layer uses the configured
//! activation. Weights initialize uniformly in `+-1/sqrt(fan_in)`, biases at
//! zero.

use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output_activation: Activation) -> Self {
        MlpSpec {
            widths,
            output_activation,
        }
    }

    pub fn linear(out: usize) -> Self {
        Self::new(vec![out], Activation::Linear)
    }

    pub fn tanh(widths: Vec<usize>) -> Self {
        Self::new(widths, Activation::Tanh)
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len()
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("MlpSpec must have layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidArgument("MLP needs at least one layer".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "MLP layer widths must be positive: {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    /// Parameter count for a given input width.
    pub fn param_count(&self, in_dim: usize) -> usize {
        let mut total = 0;
        let mut prev = in_dim;
        for &w in &self.widths {
            total += prev * w + w;
            prev = w;
        }
        total
    }
}

/// Parameter indices of an instantiated MLP within a [`ParamStore`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub in_dim: usize,
    weights: Vec<usize>,
    biases: Vec<usize>,
}

impl Mlp {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngStream,
        prefix: &str,
        in_dim: usize,
        spec: MlpSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.widths.len());
        let mut biases = Vec::with_capacity(spec.widths.len());
        let mut prev = in_dim;
        for (layer, &w) in spec.widths.iter().enumerate() {
            let bound = 1.0 / (prev as f64).sqrt();
            let weight = Tensor::uniform(vec![prev, w], -bound, bound, rng);
            weights.push(store.add(format!("{prefix}.w{layer}"), weight));
            biases.push(store.add(format!("{prefix}.b{layer}"), Tensor::zeros(vec![w])));
            prev = w;
        }
        Ok(Mlp {
            spec,
            in_dim,
            weights,
            biases,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Forward through all layers. `bound` maps store indices to tape vars
    /// for the current pass.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let mut cur = x;
        let last = self.weights.len() - 1;
        for (layer, (&w_idx, &b_idx)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(cur, bound[w_idx])?;
            let z = tape.add_bias(z, bound[b_idx])?;
            cur = if layer < last {
                tape.tanh(z)
            } else {
                match self.spec.output_activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Sigmoid => tape.sigmoid(z),
                    Activation::Linear => z,
                }
            };
        }
        Ok(cur)
    }
}
