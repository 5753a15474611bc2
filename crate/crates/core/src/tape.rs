//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! Every operation computes its value immediately and records itself as a
//! node; [`Tape::backward`] walks the nodes in reverse, applying each op's
//! local vector-Jacobian product. The tape is rebuilt per forward pass, which
//! keeps backpropagation through time correct for arbitrary sequence lengths.
//!
//! Two ops are deliberately non-standard:
//! * [`Tape::heaviside_ste`] — step function forward, identity backward
//!   (straight-through estimator). The downstream adjoint is bit-identical to
//!   the upstream one.
//! * [`Tape::gate_lerp`] — `prev + gate * (cand - prev)` with a literal copy
//!   of `prev` wherever `gate == 0`, so a closed gate leaves the latent state
//!   bit-identical.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{matmul_acc, matmul_acc_nt, matmul_acc_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Retanh(Var),
    HeavisideSte(Var),
    AddNoise(Var),
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize, len: usize },
    GateLerp { prev: Var, cand: Var, gate: Var },
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    MeanCols(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, materializing zeros for parameters the loss never
    /// touched.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        None => *slot = Some(contribution),
        Some(t) => t.add_in_place(&contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Re-enter a recorded value as a fresh leaf (cuts the gradient path;
    /// used for truncated backpropagation through time).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Leaf)
    }

    fn require_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.same_shape(tb) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    /// Matrix product. Rank-1 operands follow the usual convention: a vector
    /// on the left is a row, on the right a column, and the result is rank-1.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let a_vec = ta.shape().len() == 1;
        let b_vec = tb.shape().len() == 1;
        let (m, k1) = ta.dims2();
        let (k2, n) = if b_vec {
            (tb.numel(), 1)
        } else {
            tb.dims2()
        };
        if k1 != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, ta.data(), tb.data(), m, k1, n);
        let shape = if a_vec || b_vec {
            vec![m * n]
        } else {
            vec![m, n]
        };
        let value = Tensor::new(shape, out).expect("matmul output shape");
        Ok(self.push(value, Op::Matmul { a, b, m, k: k1, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same_shape("add", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same_shape("sub", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same_shape("mul", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Broadcast a length-`n` bias over every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (m, n) = ta.dims2();
        if tb.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (x, b) in ta.row(i).iter().zip(tb.data()) {
                data.push(x + b);
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * k);
        self.push(value, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// Rectified tanh: `max(0, tanh(s))`. The derivative is `1 - tanh(s)^2`
    /// for `s > 0` and exactly 0 for `s <= 0`.
    pub fn retanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.tanh().max(0.0));
        self.push(value, Op::Retanh(a))
    }

    /// Heaviside step with a straight-through gradient estimator: forward is
    /// `1` where `v > 0` else `0`; backward passes the adjoint unchanged.
    pub fn heaviside_ste(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(value, Op::HeavisideSte(a))
    }

    /// Reparametrized Gaussian noise: `mean + eps` with
    /// `eps ~ N(0, variance * I)`. Gradients flow through `mean` only. With
    /// `variance == 0` the mean node is returned untouched.
    pub fn gaussian_noise(&mut self, mean: Var, variance: f64, rng: &mut RngStream) -> Result<Var> {
        if variance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(mean);
        }
        let std = variance.sqrt();
        let value = self.nodes[mean.0].value.map(|x| x + std * rng.normal());
        Ok(self.push(value, Op::AddNoise(mean)))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0].0].value.dims2().0;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.nodes[p.0].value.dims2();
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: self.nodes[p.0].value.shape().to_vec(),
                });
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let value = Tensor::matrix(m, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = ta.dims2();
        if start + len > n {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of bounds for {n} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&ta.row(i)[start..start + len]);
        }
        let value = Tensor::matrix(m, len, data)?;
        Ok(self.push(value, Op::SliceCols { a, start, len }))
    }

    /// Gated interpolation `prev + gate * (cand - prev)`. Where `gate == 0`
    /// the previous value is copied verbatim, keeping closed gates bit-exact.
    pub fn gate_lerp(&mut self, prev: Var, cand: Var, gate: Var) -> Result<Var> {
        self.require_same_shape("gate_lerp", prev, cand)?;
        self.require_same_shape("gate_lerp", prev, gate)?;
        let (p, c, g) = (
            &self.nodes[prev.0].value,
            &self.nodes[cand.0].value,
            &self.nodes[gate.0].value,
        );
        let data: Vec<f64> = p
            .data()
            .iter()
            .zip(c.data())
            .zip(g.data())
            .map(|((&pv, &cv), &gv)| if gv == 0.0 { pv } else { pv + gv * (cv - pv) })
            .collect();
        let value = Tensor::new(p.shape().to_vec(), data)?;
        Ok(self.push(value, Op::GateLerp { prev, cand, gate }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().sum();
        let m = s / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(a))
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (m, _) = t.dims2();
        let data: Vec<f64> = (0..m).map(|i| t.row(i).iter().sum()).collect();
        self.push(Tensor::matrix(m, 1, data).unwrap(), Op::SumCols(a))
    }

    /// Row means: `[m, n] -> [m, 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (m, n) = t.dims2();
        let data: Vec<f64> = (0..m).map(|i| t.row(i).iter().sum::<f64>() / n as f64).collect();
        self.push(Tensor::matrix(m, 1, data).unwrap(), Op::MeanCols(a))
    }

    /// Mean squared error between two same-shape tensors, as a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..=loss.0).rev() {
            let dz = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Keep the node's own gradient readable after the sweep.
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    grads[idx] = Some(dz);
                    continue;
                }
                Op::Matmul { a, b, m, k, n } => {
                    {
                        let slot = grads[a.0].get_or_insert_with(|| {
                            Tensor::zeros(self.nodes[a.0].value.shape().to_vec())
                        });
                        let b_val = &self.nodes[b.0].value;
                        matmul_acc_nt(slot.data_mut(), dz.data(), b_val.data(), m, n, k);
                    }
                    {
                        let slot = grads[b.0].get_or_insert_with(|| {
                            Tensor::zeros(self.nodes[b.0].value.shape().to_vec())
                        });
                        let a_val = &self.nodes[a.0].value;
                        matmul_acc_tn(slot.data_mut(), a_val.data(), dz.data(), m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], dz.clone());
                    accumulate(&mut grads[b.0], dz.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], dz.clone());
                    accumulate(&mut grads[b.0], dz.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&dz, &self.nodes[b.0].value, |g, y| g * y);
                    let db = zip_map(&dz, &self.nodes[a.0].value, |g, x| g * x);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::AddBias(a, bias) => {
                    let (m, n) = dz.dims2();
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (acc, g) in db.iter_mut().zip(dz.row(i)) {
                            *acc += g;
                        }
                    }
                    let db = Tensor::new(self.nodes[bias.0].value.shape().to_vec(), db).unwrap();
                    accumulate(&mut grads[bias.0], db);
                    accumulate(&mut grads[a.0], dz.clone());
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads[a.0], dz.map(|v| v * k));
                }
                Op::Tanh(a) => {
                    let da = zip_map(&dz, &self.nodes[idx].value, |g, z| g * (1.0 - z * z));
                    accumulate(&mut grads[a.0], da);
                }
                Op::Sigmoid(a) => {
                    let da = zip_map(&dz, &self.nodes[idx].value, |g, z| g * z * (1.0 - z));
                    accumulate(&mut grads[a.0], da);
                }
                Op::Retanh(a) => {
                    let input = &self.nodes[a.0].value;
                    let out = &self.nodes[idx].value;
                    let data: Vec<f64> = dz
                        .data()
                        .iter()
                        .zip(input.data())
                        .zip(out.data())
                        .map(|((&g, &s), &z)| if s > 0.0 { g * (1.0 - z * z) } else { 0.0 })
                        .collect();
                    accumulate(
                        &mut grads[a.0],
                        Tensor::new(input.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::HeavisideSte(a) | Op::AddNoise(a) => {
                    accumulate(&mut grads[a.0], dz.clone());
                }
                Op::ConcatCols(parts) => {
                    let (m, _) = dz.dims2();
                    let mut start = 0;
                    for &p in &parts {
                        let (_, pn) = self.nodes[p.0].value.dims2();
                        let mut data = Vec::with_capacity(m * pn);
                        for i in 0..m {
                            data.extend_from_slice(&dz.row(i)[start..start + pn]);
                        }
                        let dp =
                            Tensor::new(self.nodes[p.0].value.shape().to_vec(), data).unwrap();
                        accumulate(&mut grads[p.0], dp);
                        start += pn;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let ta_shape = self.nodes[a.0].value.shape().to_vec();
                    let (m, n) = self.nodes[a.0].value.dims2();
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(ta_shape));
                    for i in 0..m {
                        let row = &mut slot.data_mut()[i * n..(i + 1) * n];
                        for (j, g) in dz.row(i).iter().take(len).enumerate() {
                            row[start + j] += g;
                        }
                    }
                }
                Op::GateLerp { prev, cand, gate } => {
                    let g_val = &self.nodes[gate.0].value;
                    let p_val = &self.nodes[prev.0].value;
                    let c_val = &self.nodes[cand.0].value;
                    let dprev = zip_map(&dz, g_val, |g, lam| g * (1.0 - lam));
                    let dcand = zip_map(&dz, g_val, |g, lam| g * lam);
                    let dgate_data: Vec<f64> = dz
                        .data()
                        .iter()
                        .zip(c_val.data())
                        .zip(p_val.data())
                        .map(|((&g, &c), &p)| g * (c - p))
                        .collect();
                    accumulate(&mut grads[prev.0], dprev);
                    accumulate(&mut grads[cand.0], dcand);
                    accumulate(
                        &mut grads[gate.0],
                        Tensor::new(g_val.shape().to_vec(), dgate_data).unwrap(),
                    );
                }
                Op::SumAll(a) => {
                    let g = dz.item();
                    let da = self.nodes[a.0].value.map(|_| g);
                    accumulate(&mut grads[a.0], da);
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a.0].value.numel() as f64;
                    let g = dz.item() / n;
                    let da = self.nodes[a.0].value.map(|_| g);
                    accumulate(&mut grads[a.0], da);
                }
                Op::SumCols(a) => {
                    let ta = &self.nodes[a.0].value;
                    let (m, n) = ta.dims2();
                    let mut data = Vec::with_capacity(m * n);
                    for i in 0..m {
                        let g = dz.data()[i];
                        data.extend(std::iter::repeat(g).take(n));
                    }
                    accumulate(
                        &mut grads[a.0],
                        Tensor::new(ta.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::MeanCols(a) => {
                    let ta = &self.nodes[a.0].value;
                    let (m, n) = ta.dims2();
                    let mut data = Vec::with_capacity(m * n);
                    for i in 0..m {
                        let g = dz.data()[i] / n as f64;
                        data.extend(std::iter::repeat(g).take(n));
                    }
                    accumulate(
                        &mut grads[a.0],
                        Tensor::new(ta.shape().to_vec(), data).unwrap(),
                    );
                }
            }
        }

        Ok(Gradients { grads })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.numel(), b.numel());
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn tanh_and_sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let th = tape.tanh(x);
        let sg = tape.sigmoid(x);
        assert_eq!(tape.value(th).item(), 0.0);
        assert_eq!(tape.value(sg).item(), 0.5);
    }

    #[test]
    fn matmul_identity_maps_vector() {
        let mut tape = Tape::new();
        let eye = tape.leaf(Tensor::eye(2));
        let v = tape.leaf(t(vec![2], vec![0.25, -1.5]));
        let out = tape.matmul(eye, v).unwrap();
        assert_eq!(tape.value(out).data(), &[0.25, -1.5]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "unhelpful error: {msg}");
    }

    #[test]
    fn retanh_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![3], vec![0.0, -1.0, 3.0]));
        let y = tape.retanh(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.995054753686730).abs() < 1e-12);
    }

    #[test]
    fn retanh_derivative_zero_at_and_below_zero() {
        for s in [-2.0, -0.1, 0.0] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(s));
            let y = tape.retanh(x);
            let loss = tape.sum_all(y);
            let grads = tape.backward(loss).unwrap();
            assert_eq!(grads.wrt_or_zeros(x, &[1, 1]).item(), 0.0);
        }
    }

    #[test]
    fn heaviside_forward_and_straight_through_adjoint() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![3], vec![0.5, 0.0, -0.3]));
        let y = tape.heaviside_ste(x);
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.0]);

        // Upstream adjoint of 2.0 arrives unchanged.
        let two = tape.scale(y, 2.0);
        let loss = tape.sum_all(two);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.wrt(x).unwrap();
        for &g in gx.data() {
            assert_eq!(g.to_bits(), 2.0f64.to_bits());
        }
    }

    #[test]
    fn noise_variance_zero_returns_mean_exactly() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(5);
        let m = tape.leaf(t(vec![2], vec![0.7, -0.2]));
        let s = tape.gaussian_noise(m, 0.0, &mut rng).unwrap();
        assert_eq!(s, m);
        assert!(tape.gaussian_noise(m, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_gradient_flows_through_mean_only() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(5);
        let m = tape.leaf(t(vec![4], vec![0.0; 4]));
        let s = tape.gaussian_noise(m, 0.5, &mut rng).unwrap();
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(m).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn noise_determinism_same_seed() {
        let draw = |seed: u64| {
            let mut tape = Tape::new();
            let mut rng = RngStream::new(seed);
            let m = tape.leaf(Tensor::zeros(vec![8]));
            let s = tape.gaussian_noise(m, 0.1, &mut rng).unwrap();
            tape.value(s).data().to_vec()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn sum_gradient_is_ones_and_unused_param_is_zero() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let unused = tape.leaf(t(vec![3], vec![0.0; 3]));
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(p).unwrap().data(), &[1.0; 4]);
        assert!(grads.wrt(unused).is_none());
        assert_eq!(grads.wrt_or_zeros(unused, &[3]).data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::zeros(vec![2, 2]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn gate_lerp_closed_gate_is_bit_exact() {
        let mut tape = Tape::new();
        let prev = tape.leaf(t(vec![3], vec![0.1 + 0.2, -0.0, 1.0 / 3.0]));
        let cand = tape.leaf(t(vec![3], vec![9.0, 9.0, 9.0]));
        let gate = tape.leaf(t(vec![3], vec![0.0, 0.0, 0.0]));
        let out = tape.gate_lerp(prev, cand, gate).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(prev).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gate_lerp_open_gate_returns_candidate() {
        let mut tape = Tape::new();
        let prev = tape.leaf(t(vec![2], vec![0.5, -0.5]));
        let cand = tape.leaf(t(vec![2], vec![0.125, 0.25]));
        let gate = tape.leaf(t(vec![2], vec![1.0, 1.0]));
        let out = tape.gate_lerp(prev, cand, gate).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(cand).data());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(vec![2, 1], vec![5.0, 6.0]));
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice_cols(cat, 2, 1).unwrap();
        assert_eq!(tape.value(back).data(), &[5.0, 6.0]);
    }
}
