//! Evaluation metrics and interpretability exports: autoregressive
//! prediction error, gate-opening statistics, latent-dimension usage,
//! event-aligned gating classification, and per-episode latent-trace CSVs.

use crate::cells::Mode;
use crate::envs::Episode;
use crate::error::{Error, Result};
use crate::model::{batch_episodes, Feed, GateTrace, Rollout, SeqModel};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Episodes per evaluation chunk (bounds tape memory).
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GatingConfusion {
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub correct_rejections: usize,
    pub hit_rate: f64,
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
    pub correct_rejection_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    /// Autoregressive observation MSE, mean and std over episodes.
    pub nstep_mse_mean: f64,
    pub nstep_mse_std: f64,
    /// Mean binarized gate opening over steps and latent dimensions.
    pub gate_open_rate: f64,
    /// Latent dimensions with at least one opening, averaged over episodes.
    pub dims_changed_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gating: Option<GatingConfusion>,
    /// 1-step error of the sheep x prediction at reappearance (Shepherd).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sheep_reappearance_x_error: Option<f64>,
}

/// Mean binarized opening over time steps, latent dimensions, and episodes.
/// Cells without gates update every step, reported as 1.0.
pub fn gate_open_rate(trace: &GateTrace) -> f64 {
    if !trace.is_gated() {
        log::warn!("gate_open_rate on an ungated cell: every step updates, reporting 1.0");
        return 1.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for step in &trace.steps {
        let theta = step.theta.as_ref().unwrap();
        sum += theta.data().iter().sum::<f64>();
        n += theta.numel();
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per episode: number of latent dimensions that opened at least once,
/// averaged over the batch rows of the trace.
pub fn dims_changed(trace: &GateTrace) -> f64 {
    let dim = trace.latent_dim();
    if !trace.is_gated() {
        return dim as f64;
    }
    let rows = trace.h0.dims2().0;
    let mut opened = vec![false; rows * dim];
    for step in &trace.steps {
        let theta = step.theta.as_ref().unwrap();
        for (slot, &v) in opened.iter_mut().zip(theta.data()) {
            *slot |= v > 0.0;
        }
    }
    let total: usize = opened.iter().filter(|&&b| b).count();
    total as f64 / rows as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Autoregressive N-step observation error: roll out in eval mode from the
/// first `w` observations (actions teacher-fed) and score the predicted
/// observations against the real ones. Returns per-episode MSEs.
pub fn nstep_errors(model: &SeqModel, episodes: &[Episode]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(episodes.len());
    let c = model.config.residual_scale;
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let obs: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|e| &e.obs).collect();
        let act: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|e| &e.act).collect();
        let batch = batch_episodes(&obs, &act, model.config.act_dim)?;
        let mut rng = RngStream::new(0);
        let rollout = model.forward(&batch, Feed::Autoregressive, Mode::Eval, &mut rng, None)?;
        let predicted = rollout.predicted_obs(c);
        // predicted[i] estimates obs at time pred_start + 1 + i.
        let mut sq = vec![0.0; chunk.len()];
        let mut count = 0usize;
        for (i, pred) in predicted.iter().enumerate() {
            let t = rollout.pred_start + 1 + i;
            for (row, sq_acc) in sq.iter_mut().enumerate() {
                for (d, &p) in pred.row(row).iter().enumerate() {
                    let e = p - chunk[row].obs[t][d];
                    *sq_acc += e * e;
                }
            }
            count += 1;
        }
        let denom = (count * model.config.obs_dim) as f64;
        out.extend(sq.into_iter().map(|s| s / denom));
    }
    Ok(out)
}

/// Event-aligned gating classification. `event_step` labels at most one step
/// per episode (e.g. the control-onset step in Robot Remote Control); a step
/// is "open" when any latent dimension opened. The trace must be gated and
/// produced teacher-fed over the same episodes.
pub fn gating_classification(
    traces: &[(GateTrace, usize)],
    episodes: &[Episode],
    event_step: impl Fn(&Episode) -> Option<usize>,
) -> Result<GatingConfusion> {
    let mut conf = GatingConfusion::default();
    let mut episode_offset = 0usize;
    for (trace, pred_start) in traces {
        if !trace.is_gated() {
            return Err(Error::InvalidArgument(
                "gating classification needs a gated cell".into(),
            ));
        }
        let rows = trace.h0.dims2().0;
        if episode_offset + rows > episodes.len() {
            return Err(Error::InvalidArgument(
                "traces cover more rows than episodes given".into(),
            ));
        }
        for row in 0..rows {
            let episode = &episodes[episode_offset + row];
            let event = event_step(episode);
            for (k, step) in trace.steps.iter().enumerate() {
                let t = pred_start + k;
                let theta = step.theta.as_ref().unwrap();
                let open = theta.row(row).iter().any(|&v| v > 0.0);
                match (event == Some(t), open) {
                    (true, true) => conf.hits += 1,
                    (true, false) => conf.misses += 1,
                    (false, true) => conf.false_alarms += 1,
                    (false, false) => conf.correct_rejections += 1,
                }
            }
        }
        episode_offset += rows;
    }
    let events = (conf.hits + conf.misses).max(1) as f64;
    let non_events = (conf.false_alarms + conf.correct_rejections).max(1) as f64;
    conf.hit_rate = conf.hits as f64 / events;
    conf.miss_rate = conf.misses as f64 / events;
    conf.false_alarm_rate = conf.false_alarms as f64 / non_events;
    conf.correct_rejection_rate = conf.correct_rejections as f64 / non_events;
    Ok(conf)
}

/// Full evaluation: autoregressive error plus teacher-fed gate statistics,
/// optional event classification and shepherd memorization error.
pub struct EvalOptions<'a> {
    pub event_step: Option<&'a dyn Fn(&Episode) -> Option<usize>>,
    pub sheep_x_slot: Option<usize>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            event_step: None,
            sheep_x_slot: None,
        }
    }
}

pub fn evaluate(
    model: &SeqModel,
    episodes: &[Episode],
    options: &EvalOptions<'_>,
) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("no episodes to evaluate".into()));
    }
    let nstep = nstep_errors(model, episodes)?;
    let (nstep_mean, nstep_std) = mean_std(&nstep);

    // Teacher-fed pass for gate statistics and event metrics.
    let mut traces: Vec<(GateTrace, usize)> = Vec::new();
    let mut rate_sum = 0.0;
    let mut dims_sum = 0.0;
    let mut rate_chunks = 0usize;
    let mut sheep_errors: Vec<f64> = Vec::new();
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let obs: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|e| &e.obs).collect();
        let act: Vec<&Vec<Vec<f64>>> = chunk.iter().map(|e| &e.act).collect();
        let batch = batch_episodes(&obs, &act, model.config.act_dim)?;
        let mut rng = RngStream::new(0);
        let rollout = model.forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)?;
        let trace = rollout.trace();
        if trace.is_gated() {
            rate_sum += gate_open_rate(&trace);
            dims_sum += dims_changed(&trace);
        } else {
            rate_sum += 1.0;
            dims_sum += trace.latent_dim() as f64;
        }
        rate_chunks += 1;
        if let Some(slot) = options.sheep_x_slot {
            sheep_errors.extend(sheep_reappearance_errors(&rollout, chunk, slot, model)?);
        }
        traces.push((trace, rollout.pred_start));
    }

    let gating = match options.event_step {
        Some(f) => Some(gating_classification(&traces, episodes, f)?),
        None => None,
    };

    Ok(MetricsReport {
        episodes: episodes.len(),
        nstep_mse_mean: nstep_mean,
        nstep_mse_std: nstep_std,
        gate_open_rate: rate_sum / rate_chunks as f64,
        dims_changed_mean: dims_sum / rate_chunks as f64,
        gating,
        sheep_reappearance_x_error: if sheep_errors.is_empty() {
            None
        } else {
            Some(mean_std(&sheep_errors).0)
        },
    })
}

/// Absolute 1-step error of the predicted sheep x at the reappearance
/// transition, from a teacher-fed rollout.
fn sheep_reappearance_errors(
    rollout: &Rollout,
    chunk: &[Episode],
    sheep_x_slot: usize,
    model: &SeqModel,
) -> Result<Vec<f64>> {
    let c = model.config.residual_scale;
    let predicted = rollout.predicted_obs(c);
    let mut out = Vec::new();
    for (row, ep) in chunk.iter().enumerate() {
        let Some(t_r) = ep.meta.reappear_step else {
            continue;
        };
        // Prediction made at input step t_r estimates obs[t_r + 1], the
        // first observation showing the sheep again.
        if t_r < rollout.pred_start || t_r + 1 >= ep.obs.len() {
            continue;
        }
        let i = t_r - rollout.pred_start;
        let pred_x = predicted[i].row(row)[sheep_x_slot];
        let true_x = ep.obs[t_r + 1][sheep_x_slot];
        out.push((pred_x - true_x).abs());
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Export one episode's latent trace as CSV. Row 0 is the initialization
/// (`hrel` all zero, gates closed); row `k >= 1` covers processed step `k-1`
/// with `pred` the model's next-observation estimate from that step.
pub fn export_latent_trace(
    trace: &GateTrace,
    row: usize,
    predicted_obs: &[Vec<f64>],
    path: &Path,
) -> Result<()> {
    let dim = trace.latent_dim();
    let obs_dim = predicted_obs.first().map_or(0, |p| p.len());
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("t,open_count");
    for j in 1..=dim {
        header.push_str(&format!(",h_{j}"));
    }
    for j in 1..=dim {
        header.push_str(&format!(",hrel_{j}"));
    }
    for j in 1..=dim {
        header.push_str(&format!(",g_{j}"));
    }
    for d in 1..=obs_dim {
        header.push_str(&format!(",pred_{d}"));
    }
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{header}").map_err(io_err)?;

    let h0 = trace.h0.row(row);
    let write_row = |w: &mut dyn Write,
                     t: usize,
                     h: &[f64],
                     g: Option<&[f64]>,
                     pred: Option<&[f64]>|
     -> std::io::Result<()> {
        let open_count = g.map_or(0, |g| g.iter().filter(|&&v| v > 0.0).count());
        write!(w, "{t},{open_count}")?;
        for v in h {
            write!(w, ",{v}")?;
        }
        for (v, v0) in h.iter().zip(h0) {
            write!(w, ",{}", v - v0)?;
        }
        for j in 0..h.len() {
            write!(w, ",{}", g.map_or(0.0, |g| g[j]))?;
        }
        for d in 0..obs_dim {
            write!(w, ",{}", pred.map_or(0.0, |p| p[d]))?;
        }
        writeln!(w)
    };

    write_row(&mut w, 0, h0, None, None).map_err(io_err)?;
    for (k, step) in trace.steps.iter().enumerate() {
        let h = step.h.row(row);
        let g = step.lam.as_ref().map(|l| l.row(row));
        let pred = predicted_obs.get(k).map(|p| p.as_slice());
        write_row(&mut w, k + 1, h, g, pred).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceStep;
    use crate::tensor::Tensor;

    fn gated_trace(thetas: Vec<Vec<f64>>, dim: usize) -> GateTrace {
        GateTrace {
            h0: Tensor::zeros(vec![1, dim]),
            steps: thetas
                .into_iter()
                .map(|t| TraceStep {
                    s: None,
                    lam: Some(Tensor::matrix(1, dim, t.clone()).unwrap()),
                    theta: Some(
                        Tensor::matrix(1, dim, t.iter().map(|&v| (v > 0.0) as u8 as f64).collect())
                            .unwrap(),
                    ),
                    h: Tensor::zeros(vec![1, dim]),
                })
                .collect(),
        }
    }

    #[test]
    fn open_rate_definitions() {
        let closed = gated_trace(vec![vec![0.0; 8]; 10], 8);
        assert_eq!(gate_open_rate(&closed), 0.0);
        // One dim open every step, H = 8 -> rate 1/8.
        let one = gated_trace(
            (0..10)
                .map(|_| {
                    let mut v = vec![0.0; 8];
                    v[3] = 0.7;
                    v
                })
                .collect(),
            8,
        );
        assert!((gate_open_rate(&one) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn dims_changed_counts() {
        let closed = gated_trace(vec![vec![0.0; 4]; 5], 4);
        assert_eq!(dims_changed(&closed), 0.0);
        let all = gated_trace(
            (0..4)
                .map(|t| {
                    let mut v = vec![0.0; 4];
                    v[t] = 0.5;
                    v
                })
                .collect(),
            4,
        );
        assert_eq!(dims_changed(&all), 4.0);
    }

    #[test]
    fn confusion_endpoints() {
        use crate::envs::{Episode, EpisodeMeta};
        let mk_ep = |onset: Option<usize>| Episode {
            id: 0,
            obs: vec![vec![0.0]; 12],
            act: vec![vec![]; 12],
            meta: EpisodeMeta {
                control_onset: onset,
                ..EpisodeMeta::default()
            },
        };
        // Gates open exactly at the event step.
        let mut thetas = vec![vec![0.0; 2]; 10];
        thetas[4] = vec![1.0, 0.0];
        let trace = gated_trace(thetas, 2);
        let eps = vec![mk_ep(Some(4))];
        let conf = gating_classification(&[(trace, 0)], &eps, |e| e.meta.control_onset).unwrap();
        assert_eq!(conf.hits, 1);
        assert_eq!(conf.misses, 0);
        assert_eq!(conf.false_alarms, 0);
        assert_eq!(conf.hit_rate, 1.0);
        assert_eq!(conf.false_alarm_rate, 0.0);

        // Gates never open.
        let trace = gated_trace(vec![vec![0.0; 2]; 10], 2);
        let conf =
            gating_classification(&[(trace, 0)], &eps, |e| e.meta.control_onset).unwrap();
        assert_eq!(conf.hits, 0);
        assert_eq!(conf.correct_rejection_rate, 1.0);
        // Completeness: hits+misses = events, fa+cr = non-events.
        assert_eq!(conf.hits + conf.misses, 1);
        assert_eq!(conf.false_alarms + conf.correct_rejections, 9);
    }

    #[test]
    fn latent_trace_export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = gated_trace(vec![vec![0.5, 0.0], vec![0.0, 0.0]], 2);
        let preds = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        export_latent_trace(&trace, 0, &preds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "t,open_count,h_1,h_2,hrel_1,hrel_2,g_1,g_2,pred_1,pred_2");
        // Row 0: initialization, hrel all zero, no openings.
        let row0: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(row0[0], "0");
        assert_eq!(row0[1], "0");
        assert_eq!(row0[7], "0");
        // Row 1: one opening, lam exported, prediction exported.
        let row1: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(row1[1], "1");
        assert_eq!(row1[6], "0.5");
        assert_eq!(row1[8], "0.1");
    }
}
