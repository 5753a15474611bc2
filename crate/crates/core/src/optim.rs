//! Named parameter store with Adam and global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. `epsilon` is added to the square-rooted second
/// moment, outside the root.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-4,
        }
    }
}

/// All learnable tensors of a model plus their Adam moment accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub adam: AdamConfig,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.first_moment.push(Tensor::zeros(value.shape().to_vec()));
        self.second_moment.push(Tensor::zeros(value.shape().to_vec()));
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.values[idx]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Snapshot of the raw parameter values (used for divergence rollback).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.values.clone()
    }

    /// All parameter values as one flat vector, in store order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for v in &self.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Overwrite all parameter values from a flat vector.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.numel();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.values.len());
        self.values.clone_from_slice(snapshot);
    }

    /// Register every parameter as a leaf on `tape`, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// One Adam update with bias correction. `grads` must align with the
    /// store, one tensor per parameter.
    pub fn adam_step(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.values.len()
            )));
        }
        for (idx, g) in grads.iter().enumerate() {
            if g.shape() != self.values[idx].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: self.values[idx].shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (idx, g) in grads.iter().enumerate() {
            let m = self.first_moment[idx].data_mut();
            let v = self.second_moment[idx].data_mut();
            let p = self.values[idx].data_mut();
            for ((pi, (mi, vi)), &gi) in p
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm does not exceed `threshold`.
/// A norm already at or below the threshold (including all-zero gradients)
/// is left untouched.
pub fn clip_grad_norm(grads: &mut [Tensor], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = grads
        .iter()
        .map(Tensor::sq_l2_norm)
        .sum::<f64>()
        .sqrt();
    if norm > threshold {
        let factor = threshold / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    norm
}
