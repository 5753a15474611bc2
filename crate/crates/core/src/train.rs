//! Training recipe: task loss on scaled observation changes plus a gate
//! penalty, scheduled sampling, gradient-norm clipping, and Adam.
//!
//! The loss per sequence sums over time steps the per-step mean squared error
//! across observation dimensions plus `lambda` times the per-step gate
//! penalty summed over latent dimensions; batches average over sequences.
//! The L0 penalty counts binarized gate openings `step(lambda)`; gradients
//! reach the gating network through the straight-through estimator, so closed
//! gates (`s <= 0`) receive no opening pressure.

use crate::cells::Mode;
use crate::envs::Episode;
use crate::error::{Error, Result};
use crate::model::{batch_episodes, BatchSeq, Feed, Rollout, SeqModel, STREAM_TRAIN};
use crate::optim::clip_grad_norm;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L0,
    L1,
    L2,
    None,
}

impl PenaltyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l0" => Ok(PenaltyKind::L0),
            "l1" => Ok(PenaltyKind::L1),
            "l2" => Ok(PenaltyKind::L2),
            "none" => Ok(PenaltyKind::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown penalty '{other}' (valid: l0, l1, l2, none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Gate-penalty weight.
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Scheduled-sampling decay constant `k` in `p_i = max(k^i, p_min)`.
    pub schedule_k: f64,
    /// Floor of the real-input probability. `1.0` is pure teacher forcing.
    pub p_min: f64,
    pub clip_threshold: f64,
    pub seed: u64,
    /// Backpropagation-through-time truncation window; `None` runs full BPTT.
    pub truncate_bptt: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            penalty: PenaltyKind::L0,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 300,
            schedule_k: 0.998,
            p_min: 0.0,
            clip_threshold: 0.1,
            seed: 0,
            truncate_bptt: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_min) {
            return Err(Error::InvalidArgument("p_min must lie in [0, 1]".into()));
        }
        if !(self.schedule_k > 0.0 && self.schedule_k <= 1.0) {
            return Err(Error::InvalidArgument("schedule k must lie in (0, 1]".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.clip_threshold <= 0.0 {
            return Err(Error::InvalidArgument(
                "clip threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch (or per-batch) loss summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub task_loss: f64,
    pub gate_penalty: f64,
    pub total_loss: f64,
    pub gate_open_rate: f64,
}

/// Probability of feeding the real input at epoch `i`: `max(k^i, p_min)`.
pub fn scheduled_sampling_prob(epoch: usize, k: f64, p_min: f64) -> f64 {
    k.powi(epoch as i32).max(p_min)
}

/// Per-step feed mask: `true` keeps the real input. Warm-up steps are always
/// real; later steps are real independently with probability `p`.
pub fn build_feed_mask(seq_len: usize, warmup: usize, p: f64, rng: &mut RngStream) -> Vec<bool> {
    (0..seq_len)
        .map(|t| t < warmup || rng.below(p))
        .collect()
}

/// Loss nodes assembled on a rollout's tape.
pub struct LossNodes {
    pub total: Var,
    pub task: Var,
    pub penalty: Var,
}

/// Build training targets for a rollout: scaled deltas
/// `(o_{t+1} - o_t) / c` for each predicted step.
pub fn rollout_targets(batch: &BatchSeq, pred_start: usize, n_preds: usize, c: f64) -> Vec<Tensor> {
    (0..n_preds)
        .map(|i| {
            let t = pred_start + i;
            let cur = &batch.obs[t];
            let next = &batch.obs[t + 1];
            let data: Vec<f64> = next
                .data()
                .iter()
                .zip(cur.data())
                .map(|(&n, &c_)| (n - c_) / c)
                .collect();
            Tensor::new(cur.shape().to_vec(), data).unwrap()
        })
        .collect()
}

/// Per-step gate penalty summed over latent dimensions, `[B, 1]` per step.
fn gate_penalty_step(tape: &mut Tape, lam: Var, theta: Var, kind: PenaltyKind) -> Result<Var> {
    Ok(match kind {
        PenaltyKind::L0 => tape.sum_cols(theta),
        // Gate activations are non-negative for every variant, so the L1
        // norm is a plain sum.
        PenaltyKind::L1 => tape.sum_cols(lam),
        PenaltyKind::L2 => {
            let sq = tape.mul(lam, lam)?;
            tape.sum_cols(sq)
        }
        PenaltyKind::None => unreachable!("no penalty step without a penalty"),
    })
}

/// Assemble the sequence loss on the rollout's tape: summed over time,
/// task MSE averaged over observation dimensions, penalty summed over latent
/// dimensions, everything averaged over the batch.
pub fn sequence_loss(
    rollout: &mut Rollout,
    targets: &[Tensor],
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<LossNodes> {
    assert_eq!(targets.len(), rollout.preds.len());
    let tape = &mut rollout.tape;

    let mut task_acc: Option<Var> = None;
    for (&pred, target) in rollout.preds.iter().zip(targets) {
        let tgt = tape.leaf(target.clone());
        let d = tape.sub(pred, tgt)?;
        let sq = tape.mul(d, d)?;
        let step = tape.mean_cols(sq);
        task_acc = Some(match task_acc {
            None => step,
            Some(acc) => tape.add(acc, step)?,
        });
    }
    let task = tape.mean_all(task_acc.expect("at least one prediction"));

    let use_penalty = penalty != PenaltyKind::None && !rollout.thetas.is_empty();
    if penalty != PenaltyKind::None && lambda > 0.0 && rollout.thetas.is_empty() {
        log::warn!("gate penalty requested but the cell has no gates; skipping");
    }
    if (penalty == PenaltyKind::L1 || penalty == PenaltyKind::L2) && !rollout.thetas.is_empty() {
        // The L1/L2 variants are defined for sigmoid gates; other gate kinds
        // still compute, matching the ablation contract.
    }

    let (penalty_node, total) = if use_penalty {
        let mut pen_acc: Option<Var> = None;
        for i in 0..rollout.thetas.len() {
            let step = gate_penalty_step(tape, rollout.lams[i], rollout.thetas[i], penalty)?;
            pen_acc = Some(match pen_acc {
                None => step,
                Some(acc) => tape.add(acc, step)?,
            });
        }
        let pen = tape.mean_all(pen_acc.unwrap());
        let weighted = tape.scale(pen, lambda);
        (pen, tape.add(task, weighted)?)
    } else {
        let zero = tape.leaf(Tensor::scalar(0.0));
        (zero, task)
    };

    Ok(LossNodes {
        total,
        task,
        penalty: penalty_node,
    })
}

/// Mean binarized gate opening over steps, dimensions, and batch rows.
pub fn rollout_gate_open_rate(rollout: &Rollout) -> f64 {
    if rollout.thetas.is_empty() {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &theta in &rollout.thetas {
        let t = rollout.tape.value(theta);
        sum += t.data().iter().sum::<f64>();
        n += t.numel();
    }
    sum / n.max(1) as f64
}

/// Observer invoked after every epoch (CSV logging, progress displays).
pub type EpochCallback<'a> = dyn FnMut(usize, &LossReport, f64, f64) + 'a;

/// Train in place. Returns the per-epoch loss history. On divergence the
/// parameters roll back to the last finite epoch and an error is returned.
pub fn train(
    model: &mut SeqModel,
    episodes: &[Episode],
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut EpochCallback<'_>>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let seq_len = episodes[0].obs.len();
    let mut rng = RngStream::with_stream(cfg.seed, STREAM_TRAIN);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut last_good = model.store.snapshot();

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let p_i = scheduled_sampling_prob(epoch, cfg.schedule_k, cfg.p_min);
        rng.shuffle(&mut order);

        let mut task_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut total_sum = 0.0;
        let mut rate_sum = 0.0;
        let mut batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let obs: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|&i| &episodes[i].obs).collect();
            let act: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|&i| &episodes[i].act).collect();
            let batch = batch_episodes(&obs, &act, model.config.act_dim)?;

            let mask = build_feed_mask(seq_len, model.config.warmup, p_i, &mut rng);
            let mut rollout = model.forward(
                &batch,
                Feed::Mixed(&mask),
                Mode::Train,
                &mut rng,
                cfg.truncate_bptt,
            )?;
            let targets = rollout_targets(
                &batch,
                rollout.pred_start,
                rollout.preds.len(),
                model.config.residual_scale,
            );
            let loss = sequence_loss(&mut rollout, &targets, cfg.lambda, cfg.penalty)?;

            let total_val = rollout.tape.value(loss.total).item();
            if !total_val.is_finite() {
                model.store.restore(&last_good);
                return Err(Error::TrainDiverged { epoch });
            }
            task_sum += rollout.tape.value(loss.task).item();
            pen_sum += rollout.tape.value(loss.penalty).item();
            total_sum += total_val;
            rate_sum += rollout_gate_open_rate(&rollout);
            batches += 1;

            let grads = rollout.tape.backward(loss.total)?;
            let mut grad_vec: Vec<Tensor> = rollout
                .bound
                .iter()
                .enumerate()
                .map(|(i, &v)| grads.wrt_or_zeros(v, model.store.value(i).shape()))
                .collect();
            clip_grad_norm(&mut grad_vec, cfg.clip_threshold);
            model.store.adam_step(&grad_vec, cfg.learning_rate)?;
        }

        let n = batches.max(1) as f64;
        let report = LossReport {
            task_loss: task_sum / n,
            gate_penalty: pen_sum / n,
            total_loss: total_sum / n,
            gate_open_rate: rate_sum / n,
        };
        last_good = model.store.snapshot();
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(epoch, &report, p_i, started.elapsed().as_secs_f64() * 1e3);
        }
        history.push(report);
    }
    Ok(history)
}
