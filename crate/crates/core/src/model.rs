//! The composite sequence model: a preprocessing MLP `f_pre`, a context
//! network `f_init` that sets the initial latent state from the first `w`
//! inputs, a recurrent cell, and a linear readout `f_post`.
//!
//! The model predicts scaled observation changes: the training target at
//! step `t` is `(o_{t+1} - o_t) / c`, and autoregressive rollouts feed
//! `o_{t+1} = o_t + c * y_t` back as the next observation input. Actions are
//! always taken from data.

use crate::cells::{Cell, CellConfig, Mode};
use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp, MlpSpec};
use crate::optim::ParamStore;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture description; everything needed to rebuild a model skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Widths of `f_pre`, the last entry being the feature width fed to the
    /// cell. Hidden and output activations are tanh.
    pub f_pre_widths: Vec<usize>,
    /// Hidden widths of `f_init`; a final tanh layer to the cell state width
    /// is implied. `None` initializes the latent state with zeros.
    pub f_init_hidden: Option<Vec<usize>>,
    /// Number of leading inputs consumed by `f_init`.
    pub warmup: usize,
    /// Scale `c` applied to predictions when fed back as observations.
    pub residual_scale: f64,
    pub cell: CellConfig,
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.act_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 {
            return Err(Error::InvalidArgument("obs_dim must be positive".into()));
        }
        if self.warmup == 0 {
            return Err(Error::InvalidArgument("warmup must be at least 1".into()));
        }
        if self.f_pre_widths.is_empty() {
            return Err(Error::InvalidArgument("f_pre needs at least one layer".into()));
        }
        if self.residual_scale <= 0.0 {
            return Err(Error::InvalidArgument(
                "residual scale must be positive".into(),
            ));
        }
        self.cell.validate()
    }

    pub fn build(&self, seed: u64) -> Result<SeqModel> {
        self.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::with_stream(seed, STREAM_INIT);
        let f_pre = Mlp::init(
            &mut store,
            &mut rng,
            "f_pre",
            self.input_dim(),
            MlpSpec::tanh(self.f_pre_widths.clone()),
        )?;
        let feature_dim = f_pre.output_dim();
        let cell = Cell::init(&mut store, &mut rng, feature_dim, &self.cell)?;
        let f_init = match &self.f_init_hidden {
            Some(hidden) => {
                let mut widths = hidden.clone();
                widths.push(cell.state_dim());
                Some(Mlp::init(
                    &mut store,
                    &mut rng,
                    "f_init",
                    self.warmup * self.input_dim(),
                    MlpSpec::tanh(widths),
                )?)
            }
            None => None,
        };
        let f_post = Mlp::init(
            &mut store,
            &mut rng,
            "f_post",
            cell.output_dim(),
            MlpSpec::new(vec![self.obs_dim], Activation::Linear),
        )?;
        Ok(SeqModel {
            config: self.clone(),
            store,
            f_pre,
            f_init,
            cell,
            f_post,
            init_seed: seed,
        })
    }
}

/// RNG substream ids, fixed so runs decompose reproducibly.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_DATA: u64 = 3;
pub const STREAM_PLAN: u64 = 4;

/// How observation inputs are supplied during a rollout. Actions always come
/// from data.
#[derive(Debug, Clone, Copy)]
pub enum Feed<'a> {
    /// Every observation input comes from data.
    Teacher,
    /// Beyond the warm-up, observations are the model's own predictions.
    Autoregressive,
    /// Per-step mask: `true` feeds the real observation at that step
    /// (scheduled sampling). Entries before the warm-up are ignored.
    Mixed(&'a [bool]),
}

/// Column-batched episode block: one tensor `[B, D]` per time step.
pub struct BatchSeq {
    pub obs: Vec<Tensor>,
    pub act: Vec<Tensor>,
}

impl BatchSeq {
    pub fn seq_len(&self) -> usize {
        self.obs.len()
    }

    pub fn batch(&self) -> usize {
        self.obs.first().map_or(0, |t| t.dims2().0)
    }
}

/// Gate and latent values extracted from a rollout (one row per batched
/// episode).
#[derive(Debug, Clone)]
pub struct GateTrace {
    /// Initial latent state `[B, latent_dim]`.
    pub h0: Tensor,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub s: Option<Tensor>,
    pub lam: Option<Tensor>,
    pub theta: Option<Tensor>,
    pub h: Tensor,
}

impl GateTrace {
    pub fn is_gated(&self) -> bool {
        self.steps.first().is_some_and(|s| s.theta.is_some())
    }

    pub fn latent_dim(&self) -> usize {
        self.h0.dims2().1
    }
}

/// One recorded forward pass, with everything needed to assemble losses.
pub struct Rollout {
    pub tape: Tape,
    pub bound: Vec<Var>,
    /// Time index of the first prediction (`warmup - 1`); `preds[i]`
    /// predicts the scaled change from step `pred_start + i` to the next.
    pub pred_start: usize,
    pub preds: Vec<Var>,
    /// Observation input actually consumed at each predicted step.
    pub obs_fed: Vec<Var>,
    pub lams: Vec<Var>,
    pub thetas: Vec<Var>,
    pub latents: Vec<Var>,
    pub h0: Var,
}

impl Rollout {
    pub fn trace(&self) -> GateTrace {
        let gated = !self.thetas.is_empty();
        let steps = self
            .latents
            .iter()
            .enumerate()
            .map(|(i, &h)| TraceStep {
                s: None,
                lam: gated.then(|| self.tape.value(self.lams[i]).clone()),
                theta: gated.then(|| self.tape.value(self.thetas[i]).clone()),
                h: self.tape.value(h).clone(),
            })
            .collect();
        GateTrace {
            h0: self.tape.value(self.h0).clone(),
            steps,
        }
    }

    /// Predicted observations for steps `pred_start+1 ..= pred_start+len`,
    /// reconstructed as `obs_fed + c * pred`.
    pub fn predicted_obs(&self, residual_scale: f64) -> Vec<Tensor> {
        self.preds
            .iter()
            .zip(&self.obs_fed)
            .map(|(&p, &o)| {
                let pv = self.tape.value(p);
                let ov = self.tape.value(o);
                let data: Vec<f64> = ov
                    .data()
                    .iter()
                    .zip(pv.data())
                    .map(|(&o, &p)| o + residual_scale * p)
                    .collect();
                Tensor::new(ov.shape().to_vec(), data).unwrap()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    init_seed: u64,
    params: Vec<CheckpointParam>,
}

pub struct SeqModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub f_pre: Mlp,
    pub f_init: Option<Mlp>,
    pub cell: Cell,
    pub f_post: Mlp,
    pub init_seed: u64,
}

impl SeqModel {
    /// Ablation: initialize the latent state with zeros, bypassing `f_init`.
    /// All other parameters are kept.
    pub fn zero_init_ablation(mut self) -> Self {
        self.f_init = None;
        self.config.f_init_hidden = None;
        self
    }

    pub fn latent_dim(&self) -> usize {
        self.cell.latent_dim()
    }

    pub fn forward(
        &self,
        batch: &BatchSeq,
        feed: Feed,
        mode: Mode,
        rng: &mut RngStream,
        truncate_bptt: Option<usize>,
    ) -> Result<Rollout> {
        let t_len = batch.seq_len();
        let w = self.config.warmup;
        if t_len < w + 1 {
            return Err(Error::InvalidArgument(format!(
                "sequence length {t_len} must exceed warm-up {w}"
            )));
        }
        let b = batch.batch();
        let c = self.config.residual_scale;

        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);

        // h_0 from the first w raw inputs, or zeros for the ablation.
        let state_flat = match &self.f_init {
            Some(f_init) => {
                let mut data = Vec::with_capacity(b * w * self.config.input_dim());
                for row in 0..b {
                    for t in 0..w {
                        data.extend_from_slice(batch.obs[t].row(row));
                        if self.config.act_dim > 0 {
                            data.extend_from_slice(batch.act[t].row(row));
                        }
                    }
                }
                let init_in = tape.leaf(Tensor::matrix(b, w * self.config.input_dim(), data)?);
                f_init.forward(&mut tape, &bound, init_in)?
            }
            None => tape.leaf(Tensor::zeros(vec![b, self.cell.state_dim()])),
        };
        let mut state = self.cell.split_state(&mut tape, state_flat)?;
        let h0 = self.concat_latents(&mut tape, &state)?;

        let mut preds = Vec::with_capacity(t_len - w);
        let mut obs_fed = Vec::with_capacity(t_len - w);
        let mut lams = Vec::new();
        let mut thetas = Vec::new();
        let mut latents = Vec::new();
        let mut prev_obs: Option<Var> = None;
        let mut prev_pred: Option<Var> = None;

        for t in (w - 1)..=(t_len - 2) {
            let use_real = t == w - 1
                || match feed {
                    Feed::Teacher => true,
                    Feed::Autoregressive => false,
                    Feed::Mixed(mask) => mask[t],
                };
            let obs_var = if use_real {
                tape.leaf(batch.obs[t].clone())
            } else {
                let scaled = tape.scale(prev_pred.unwrap(), c);
                tape.add(prev_obs.unwrap(), scaled)?
            };
            let x = if self.config.act_dim > 0 {
                let act_var = tape.leaf(batch.act[t].clone());
                tape.concat_cols(&[obs_var, act_var])?
            } else {
                obs_var
            };
            let feat = self.f_pre.forward(&mut tape, &bound, x)?;
            let step = self
                .cell
                .step(&mut tape, &bound, feat, &state, mode, rng)?;
            let pred = self.f_post.forward(&mut tape, &bound, step.y)?;
            if !tape.value(pred).is_finite() {
                return Err(Error::RolloutNaN { step: t });
            }

            state = step.state;
            if let Some(gate) = step.gate {
                lams.push(gate.lam);
                thetas.push(gate.theta);
            }
            latents.push(self.concat_latents(&mut tape, &state)?);
            preds.push(pred);
            obs_fed.push(obs_var);
            prev_obs = Some(obs_var);
            prev_pred = Some(pred);

            if let Some(k) = truncate_bptt {
                if (t + 2 - w) % k == 0 {
                    state = state.iter().map(|&v| tape.detach(v)).collect();
                }
            }
        }

        Ok(Rollout {
            tape,
            bound,
            pred_start: w - 1,
            preds,
            obs_fed,
            lams,
            thetas,
            latents,
            h0,
        })
    }

    fn concat_latents(&self, tape: &mut Tape, state: &[Var]) -> Result<Var> {
        let parts = self.cell.latent_components(state);
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_cols(&parts)
        }
    }

    /// Initial state values for incremental (planning) use, from the first
    /// `w` inputs of a single episode prefix.
    pub fn init_state_values(&self, obs: &[Vec<f64>], act: &[Vec<f64>]) -> Result<Vec<Tensor>> {
        let w = self.config.warmup;
        if obs.len() < w {
            return Err(Error::InvalidArgument(format!(
                "need {w} observations to initialize, got {}",
                obs.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let state_flat = match &self.f_init {
            Some(f_init) => {
                let mut data = Vec::with_capacity(w * self.config.input_dim());
                for t in 0..w {
                    data.extend_from_slice(&obs[t]);
                    if self.config.act_dim > 0 {
                        data.extend_from_slice(&act[t]);
                    }
                }
                let init_in = tape.leaf(Tensor::matrix(1, w * self.config.input_dim(), data)?);
                f_init.forward(&mut tape, &bound, init_in)?
            }
            None => tape.leaf(Tensor::zeros(vec![1, self.cell.state_dim()])),
        };
        let state = self.cell.split_state(&mut tape, state_flat)?;
        Ok(state.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// One eval-mode cell step from explicit state values. Returns the
    /// prediction and the updated state. Rows of `obs`/`act` are independent
    /// batch entries (state tensors must have matching row counts).
    pub fn step_values(
        &self,
        state: &[Tensor],
        obs: &Tensor,
        act: Option<&Tensor>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let state_vars: Vec<Var> = state.iter().map(|t| tape.leaf(t.clone())).collect();
        let obs_var = tape.leaf(obs.clone());
        let x = match act {
            Some(a) if self.config.act_dim > 0 => {
                let act_var = tape.leaf(a.clone());
                tape.concat_cols(&[obs_var, act_var])?
            }
            _ => obs_var,
        };
        let feat = self.f_pre.forward(&mut tape, &bound, x)?;
        let mut rng = RngStream::new(0);
        let step = self
            .cell
            .step(&mut tape, &bound, feat, &state_vars, Mode::Eval, &mut rng)?;
        let pred = self.f_post.forward(&mut tape, &bound, step.y)?;
        let new_state = step.state.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.value(pred).clone(), new_state))
    }

    /// Autoregressive imagination from explicit state values: feeds each
    /// prediction back as the next observation while consuming the given
    /// action tensors. Returns the predicted observation per step.
    pub fn imagine(
        &self,
        state: &[Tensor],
        start_obs: &Tensor,
        actions: &[Tensor],
    ) -> Result<Vec<Tensor>> {
        let c = self.config.residual_scale;
        let mut state: Vec<Tensor> = state.to_vec();
        let mut obs = start_obs.clone();
        let mut out = Vec::with_capacity(actions.len());
        for act in actions {
            let (pred, new_state) = self.step_values(&state, &obs, Some(act))?;
            state = new_state;
            let data: Vec<f64> = obs
                .data()
                .iter()
                .zip(pred.data())
                .map(|(&o, &p)| o + c * p)
                .collect();
            obs = Tensor::new(obs.shape().to_vec(), data)?;
            out.push(obs.clone());
        }
        Ok(out)
    }

    // -- checkpoint io ------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let params = (0..self.store.len())
            .map(|i| CheckpointParam {
                name: self.store.name(i).to_string(),
                shape: self.store.value(i).shape().to_vec(),
                data: self.store.value(i).data().to_vec(),
            })
            .collect();
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            init_seed: self.init_seed,
            params,
        };
        let json = serde_json::to_string(&ckpt)?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<SeqModel> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format {} (expected {})",
                ckpt.format_version, CHECKPOINT_VERSION
            )));
        }
        let mut model = ckpt.config.build(ckpt.init_seed)?;
        if ckpt.params.len() != model.store.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} parameters, architecture expects {}",
                ckpt.params.len(),
                model.store.len()
            )));
        }
        for (i, p) in ckpt.params.iter().enumerate() {
            if model.store.name(i) != p.name || model.store.value(i).shape() != &p.shape[..] {
                return Err(Error::Incompatible(format!(
                    "parameter {i} is {} {:?}, expected {} {:?}",
                    p.name,
                    p.shape,
                    model.store.name(i),
                    model.store.value(i).shape()
                )));
            }
            *model.store.value_mut(i) = Tensor::new(p.shape.clone(), p.data.clone())?;
        }
        Ok(model)
    }
}

/// Assemble the column-batched block for a set of episodes (all must share
/// the same length and dimensions).
pub fn batch_episodes(
    obs: &[&Vec<Vec<f64>>],
    act: &[&Vec<Vec<f64>>],
    act_dim: usize,
) -> Result<BatchSeq> {
    let b = obs.len();
    assert!(b > 0);
    let t_len = obs[0].len();
    let obs_dim = obs[0][0].len();
    for o in obs {
        if o.len() != t_len || o.iter().any(|row| row.len() != obs_dim) {
            return Err(Error::InvalidArgument(
                "episodes in a batch must share length and observation width".into(),
            ));
        }
    }
    let mut obs_steps = Vec::with_capacity(t_len);
    let mut act_steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut od = Vec::with_capacity(b * obs_dim);
        for o in obs {
            od.extend_from_slice(&o[t]);
        }
        obs_steps.push(Tensor::matrix(b, obs_dim, od)?);
        if act_dim > 0 {
            let mut ad = Vec::with_capacity(b * act_dim);
            for a in act {
                ad.extend_from_slice(&a[t]);
            }
            act_steps.push(Tensor::matrix(b, act_dim, ad)?);
        }
    }
    Ok(BatchSeq {
        obs: obs_steps,
        act: act_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::GateL0rdConfig;

    fn small_config() -> ModelConfig {
        ModelConfig {
            obs_dim: 2,
            act_dim: 0,
            f_pre_widths: vec![8, 6],
            f_init_hidden: Some(vec![8]),
            warmup: 2,
            residual_scale: 0.1,
            cell: CellConfig::Gatel0rd(GateL0rdConfig::new(4)),
        }
    }

    fn toy_batch(b: usize, t: usize) -> BatchSeq {
        let mut rng = RngStream::new(33);
        BatchSeq {
            obs: (0..t)
                .map(|_| Tensor::uniform(vec![b, 2], -1.0, 1.0, &mut rng))
                .collect(),
            act: Vec::new(),
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let model = small_config().build(7).unwrap();
        let batch = toy_batch(3, 6);
        let run = |seed: u64| {
            let mut rng = RngStream::new(seed);
            let r = model
                .forward(&batch, Feed::Autoregressive, Mode::Eval, &mut rng, None)
                .unwrap();
            r.preds
                .iter()
                .map(|&p| r.tape.value(p).data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn sequence_must_exceed_warmup() {
        let model = small_config().build(7).unwrap();
        let batch = toy_batch(1, 2);
        let mut rng = RngStream::new(1);
        assert!(model
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .is_err());
    }

    #[test]
    fn prediction_count_is_seq_len_minus_warmup() {
        let model = small_config().build(7).unwrap();
        let batch = toy_batch(2, 9);
        let mut rng = RngStream::new(1);
        let r = model
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .unwrap();
        assert_eq!(r.preds.len(), 9 - 2);
        assert_eq!(r.pred_start, 1);
    }

    #[test]
    fn autoregressive_identity_with_perfect_predictions() {
        // If predictions equal the scaled true deltas, generated inputs
        // reproduce the true observations exactly.
        let c = 0.1;
        let obs: Vec<Vec<f64>> = (0..6).map(|t| vec![0.1 * t as f64, -0.05 * t as f64]).collect();
        let mut generated = obs[1].clone();
        for t in 1..5 {
            let pred: Vec<f64> = (0..2).map(|d| (obs[t + 1][d] - obs[t][d]) / c).collect();
            generated = generated
                .iter()
                .zip(&pred)
                .map(|(&o, &p)| o + c * p)
                .collect();
            for (g, o) in generated.iter().zip(&obs[t + 1]) {
                assert!((g - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_init_ablation_gives_zero_h0() {
        let model = small_config().build(7).unwrap().zero_init_ablation();
        let batch = toy_batch(2, 5);
        let mut rng = RngStream::new(1);
        let r = model
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .unwrap();
        assert!(r.tape.value(r.h0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f_init_depends_on_first_inputs() {
        let model = small_config().build(7).unwrap();
        let mut batch = toy_batch(1, 5);
        let mut rng = RngStream::new(1);
        let h0_a = {
            let r = model
                .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
                .unwrap();
            r.tape.value(r.h0).clone()
        };
        batch.obs[0] = Tensor::matrix(1, 2, vec![0.9, 0.9]).unwrap();
        let h0_b = {
            let r = model
                .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
                .unwrap();
            r.tape.value(r.h0).clone()
        };
        assert_ne!(h0_a.data(), h0_b.data());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let model = small_config().build(41).unwrap();
        model.save(&path).unwrap();
        let loaded = SeqModel::load(&path).unwrap();
        assert_eq!(loaded.store.len(), model.store.len());
        for i in 0..model.store.len() {
            let a = model.store.value(i).data();
            let b = loaded.store.value(i).data();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {i} differs");
            }
        }
        // Same predictions too.
        let batch = toy_batch(2, 5);
        let mut rng = RngStream::new(1);
        let ra = model
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .unwrap();
        let rb = loaded
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .unwrap();
        for (&pa, &pb) in ra.preds.iter().zip(&rb.preds) {
            assert_eq!(ra.tape.value(pa).data(), rb.tape.value(pb).data());
        }
    }
}
