//! Sample-based model-predictive control with an iCEM-style planner:
//! temporally correlated (colored) action noise, iterative elite refitting
//! with momentum, plan shifting for receding-horizon reuse, and the task
//! cost functions for Robot Remote Control and Shepherd.
//!
//! The forward model is either the ground-truth simulator (cloned world
//! state) or a learned sequence model whose latent state is obtained by
//! teacher-fed replay of the observed history before imagining futures.

use crate::envs::{rrc, shepherd, RrcParams, ShepherdParams};
use crate::error::{Error, Result};
use crate::model::SeqModel;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanTask {
    Rrc,
    Shepherd,
}

impl PlanTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rrc" => Ok(PlanTask::Rrc),
            "shepherd" => Ok(PlanTask::Shepherd),
            other => Err(Error::InvalidArgument(format!(
                "unknown task '{other}' (valid: rrc, shepherd)"
            ))),
        }
    }

    pub fn episode_budget(self) -> usize {
        match self {
            PlanTask::Rrc => 50,
            PlanTask::Shepherd => 60,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            PlanTask::Rrc => 2,
            PlanTask::Shepherd => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ICemConfig {
    /// Planning horizon cap; the effective horizon never exceeds the
    /// remaining episode budget.
    pub horizon: usize,
    pub samples: usize,
    pub iterations: usize,
    pub elites: usize,
    /// Colored-noise exponent (power spectral density ~ 1/f^beta).
    pub beta: f64,
    pub init_std: f64,
    /// Weight kept on the previous distribution when refitting to elites.
    pub momentum: f64,
    pub shift_plan: bool,
    pub replan_stride: usize,
    /// Fraction of elites re-evaluated in the next iteration's population.
    pub elite_reuse_frac: f64,
}

impl Default for ICemConfig {
    fn default() -> Self {
        ICemConfig {
            horizon: 100,
            samples: 256,
            iterations: 3,
            elites: 26,
            beta: 3.0,
            init_std: 0.5,
            momentum: 0.1,
            shift_plan: true,
            replan_stride: 1,
            elite_reuse_frac: 0.3,
        }
    }
}

impl ICemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if self.elites == 0 || self.elites >= self.samples {
            return Err(Error::InvalidArgument(
                "elite count must be positive and below the sample count".into(),
            ));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidArgument("beta must be non-negative".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.replan_stride == 0 {
            return Err(Error::InvalidArgument("replan stride must be positive".into()));
        }
        Ok(())
    }
}

/// Length-`len` noise sequence per action dimension with power spectral
/// density ~ `1/f^beta`, normalized to zero mean and unit sample variance.
/// `beta = 0` reduces to white noise.
pub fn colored_noise(len: usize, act_dim: usize, beta: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; act_dim]; len];
    if len == 1 {
        for d in 0..act_dim {
            out[0][d] = rng.normal();
        }
        return out;
    }
    let n_freq = len / 2;
    for d in 0..act_dim {
        let mut series = vec![0.0; len];
        for k in 1..=n_freq {
            let amp = (k as f64).powf(-beta / 2.0);
            let c = rng.normal() * amp;
            let s = rng.normal() * amp;
            let w = std::f64::consts::TAU * k as f64 / len as f64;
            for (t, v) in series.iter_mut().enumerate() {
                let phase = w * t as f64;
                *v += c * phase.cos() + s * phase.sin();
            }
        }
        let mean = series.iter().sum::<f64>() / len as f64;
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
        let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for (t, v) in series.iter().enumerate() {
            out[t][d] = (v - mean) / scale;
        }
    }
    out
}

/// Trajectory cost from an observation sequence.
pub fn task_cost(task: PlanTask, traj: &[Vec<f64>]) -> f64 {
    match task {
        PlanTask::Rrc => {
            let goal = RrcParams::default().goal;
            traj.iter()
                .map(|o| ((o[2] - goal[0]).powi(2) + (o[3] - goal[1]).powi(2)).sqrt())
                .sum()
        }
        PlanTask::Shepherd => {
            let gate_row = ShepherdParams::default().gate_row;
            traj.iter()
                .map(|o| {
                    let (sx, sy) = (o[3], o[4]);
                    let in_band = (-1.0..=gate_row).contains(&sy) && (-1.0..=1.0).contains(&sx);
                    if in_band {
                        ((sx - o[5]).powi(2) + (sy - o[6]).powi(2)).sqrt()
                    } else {
                        // Above the gate (or occluded): clipped to a large
                        // constant so plans must first open the gate.
                        10.0
                    }
                })
                .sum()
        }
    }
}

/// Ground-truth world used both for execution and privileged imagination.
#[derive(Debug, Clone)]
pub enum World {
    Rrc {
        params: RrcParams,
        state: rrc::RrcState,
    },
    Shepherd {
        params: ShepherdParams,
        state: shepherd::ShepherdState,
    },
}

impl World {
    /// Planning-time world: interaction radii enlarged 50%; Shepherd starts
    /// on the right side holding the cage.
    pub fn reset_for_planning(task: PlanTask, rng: &mut RngStream) -> World {
        match task {
            PlanTask::Rrc => {
                let params = RrcParams::default().for_planning();
                let state = rrc::reset(&params, rng);
                World::Rrc { params, state }
            }
            PlanTask::Shepherd => {
                let params = ShepherdParams::default().for_planning();
                let state = shepherd::reset_for_planning(&params, rng);
                World::Shepherd { params, state }
            }
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            World::Rrc { state, .. } => rrc::observe(state),
            World::Shepherd { params, state } => shepherd::observe(params, state),
        }
    }

    pub fn step(&mut self, action: &[f64]) {
        match self {
            World::Rrc { params, state } => {
                rrc::step(params, state, action);
            }
            World::Shepherd { params, state } => {
                shepherd::step(params, state, action);
            }
        }
    }

    pub fn succeeded(&self) -> bool {
        match self {
            World::Rrc { params, state } => rrc::at_goal(params, state),
            World::Shepherd { state, .. } => state.caught,
        }
    }

    /// Roll a cloned world through an action sequence, collecting
    /// observations after each step.
    pub fn imagine(&self, actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut sim = self.clone();
        actions
            .iter()
            .map(|a| {
                sim.step(a);
                sim.observe()
            })
            .collect()
    }
}

/// Forward model the planner scores trajectories with.
pub enum ForwardModel<'a> {
    GroundTruth,
    Learned(&'a SeqModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterStats {
    pub best_cost: f64,
    pub elite_mean_cost: f64,
    pub elite_std_cost: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub best_actions: Vec<Vec<f64>>,
    pub best_cost: f64,
    pub iterations: Vec<IterStats>,
}

/// Sampling distribution over action sequences, refit across iterations and
/// shifted across replans.
pub struct IcemPlanner {
    pub config: ICemConfig,
    act_dim: usize,
    mean: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    reused_elites: Vec<Vec<Vec<f64>>>,
}

impl IcemPlanner {
    pub fn new(config: ICemConfig, act_dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(IcemPlanner {
            act_dim,
            mean: Vec::new(),
            std: Vec::new(),
            reused_elites: Vec::new(),
            config,
        })
    }

    fn resize(&mut self, horizon: usize) {
        self.mean.resize(horizon, vec![0.0; self.act_dim]);
        self.mean.truncate(horizon);
        self.std
            .resize(horizon, vec![self.config.init_std; self.act_dim]);
        self.std.truncate(horizon);
        for e in &mut self.reused_elites {
            e.resize(horizon, vec![0.0; self.act_dim]);
            e.truncate(horizon);
        }
    }

    /// One full CEM optimization. `score` maps a batch of candidate action
    /// sequences to per-candidate costs (NaN costs are discarded with a
    /// warning; if every sample scores NaN the plan fails).
    pub fn plan(
        &mut self,
        horizon: usize,
        rng: &mut RngStream,
        score: &mut dyn FnMut(&[Vec<Vec<f64>>]) -> Result<Vec<f64>>,
    ) -> Result<PlanResult> {
        self.resize(horizon);
        let cfg = self.config;
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        let mut iter_stats = Vec::with_capacity(cfg.iterations);

        for _iter in 0..cfg.iterations {
            let mut population: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.samples);
            for e in self.reused_elites.drain(..) {
                population.push(e);
            }
            while population.len() < cfg.samples {
                let noise = colored_noise(horizon, self.act_dim, cfg.beta, rng);
                let seq: Vec<Vec<f64>> = (0..horizon)
                    .map(|t| {
                        (0..self.act_dim)
                            .map(|d| {
                                (self.mean[t][d] + self.std[t][d] * noise[t][d]).clamp(-1.0, 1.0)
                            })
                            .collect()
                    })
                    .collect();
                population.push(seq);
            }

            let costs = score(&population)?;
            let mut scored: Vec<(f64, usize)> = costs
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| {
                    if c.is_nan() {
                        log::warn!("discarding plan sample {i}: NaN cost");
                        None
                    } else {
                        Some((c, i))
                    }
                })
                .collect();
            if scored.is_empty() {
                return Err(Error::NonFinite {
                    context: "every plan sample scored NaN".into(),
                });
            }
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let n_elites = cfg.elites.min(scored.len());
            let elites: Vec<usize> = scored[..n_elites].iter().map(|&(_, i)| i).collect();
            let elite_costs: Vec<f64> = scored[..n_elites].iter().map(|&(c, _)| c).collect();

            if best.as_ref().is_none_or(|(c, _)| scored[0].0 < *c) {
                best = Some((scored[0].0, population[scored[0].1].clone()));
            }

            // Refit with momentum on the previous distribution.
            for t in 0..horizon {
                for d in 0..self.act_dim {
                    let m: f64 = elites.iter().map(|&i| population[i][t][d]).sum::<f64>()
                        / n_elites as f64;
                    let v: f64 = elites
                        .iter()
                        .map(|&i| (population[i][t][d] - m).powi(2))
                        .sum::<f64>()
                        / n_elites as f64;
                    self.mean[t][d] = cfg.momentum * self.mean[t][d] + (1.0 - cfg.momentum) * m;
                    self.std[t][d] =
                        cfg.momentum * self.std[t][d] + (1.0 - cfg.momentum) * v.sqrt();
                }
            }

            let em = elite_costs.iter().sum::<f64>() / n_elites as f64;
            let ev = elite_costs.iter().map(|c| (c - em).powi(2)).sum::<f64>() / n_elites as f64;
            iter_stats.push(IterStats {
                best_cost: best.as_ref().unwrap().0,
                elite_mean_cost: em,
                elite_std_cost: ev.sqrt(),
            });

            let keep = ((cfg.elite_reuse_frac * n_elites as f64) as usize).min(n_elites);
            self.reused_elites = elites[..keep]
                .iter()
                .map(|&i| population[i].clone())
                .collect();
        }
        self.reused_elites.clear();

        let (best_cost, best_actions) = best.unwrap();
        Ok(PlanResult {
            best_actions,
            best_cost,
            iterations: iter_stats,
        })
    }

    /// Receding-horizon reuse: drop the executed prefix, keep the rest of the
    /// distribution, pad the tail with the initial spread.
    pub fn shift(&mut self, executed: usize) {
        if !self.config.shift_plan {
            self.mean.clear();
            self.std.clear();
            return;
        }
        let n = executed.min(self.mean.len());
        self.mean.drain(..n);
        self.std.drain(..n);
    }
}

/// One plan-log row (`step` is the environment step the plan was made at).
#[derive(Debug, Clone, Serialize)]
pub struct PlanLogRow {
    pub step: usize,
    pub iter: usize,
    pub best_cost: f64,
    pub elite_mean: f64,
    pub elite_std: f64,
}

#[derive(Debug, Clone)]
pub struct MpcOutcome {
    pub success: bool,
    pub steps_taken: usize,
    pub trajectory: Vec<Vec<f64>>,
    pub plan_log: Vec<PlanLogRow>,
}

/// Receding-horizon control of one episode: plan, execute `replan_stride`
/// actions in the real environment, feed observations back, shift, repeat.
pub fn mpc_run(
    task: PlanTask,
    forward: &ForwardModel<'_>,
    config: &ICemConfig,
    seed: u64,
) -> Result<MpcOutcome> {
    config.validate()?;
    let mut rng = RngStream::with_stream(seed, crate::model::STREAM_PLAN);
    let mut world = World::reset_for_planning(task, &mut rng);
    let budget = task.episode_budget();
    let act_dim = task.act_dim();
    let mut planner = IcemPlanner::new(*config, act_dim)?;

    let mut obs_history: Vec<Vec<f64>> = vec![world.observe()];
    let mut act_history: Vec<Vec<f64>> = Vec::new();
    let mut plan_log = Vec::new();
    let mut step = 0usize;

    if world.succeeded() {
        return Ok(MpcOutcome {
            success: true,
            steps_taken: 0,
            trajectory: obs_history,
            plan_log,
        });
    }

    while step < budget {
        let horizon = config.horizon.min(budget - step).max(1);
        let result = match forward {
            ForwardModel::GroundTruth => {
                let world_ref = &world;
                planner.plan(horizon, &mut rng, &mut |population| {
                    Ok(population
                        .iter()
                        .map(|actions| task_cost(task, &world_ref.imagine(actions)))
                        .collect())
                })?
            }
            ForwardModel::Learned(model) => {
                let state = replay_latent(model, &obs_history, &act_history)?;
                let last_obs = obs_history.last().unwrap().clone();
                planner.plan(horizon, &mut rng, &mut |population| {
                    score_with_model(model, &state, &last_obs, population, task)
                })?
            }
        };
        for (i, it) in result.iterations.iter().enumerate() {
            plan_log.push(PlanLogRow {
                step,
                iter: i,
                best_cost: it.best_cost,
                elite_mean: it.elite_mean_cost,
                elite_std: it.elite_std_cost,
            });
        }

        let execute = config.replan_stride.min(result.best_actions.len());
        for action in &result.best_actions[..execute] {
            world.step(action);
            obs_history.push(world.observe());
            act_history.push(action.clone());
            step += 1;
            if world.succeeded() {
                return Ok(MpcOutcome {
                    success: true,
                    steps_taken: step,
                    trajectory: obs_history,
                    plan_log,
                });
            }
            if step >= budget {
                break;
            }
        }
        planner.shift(execute);
    }

    Ok(MpcOutcome {
        success: false,
        steps_taken: step,
        trajectory: obs_history,
        plan_log,
    })
}

/// Teacher-fed replay of the observed history to obtain the model's current
/// latent state. The warm-up window is padded with the first observation
/// when the history is still shorter than `w`.
fn replay_latent(
    model: &SeqModel,
    obs_history: &[Vec<f64>],
    act_history: &[Vec<f64>],
) -> Result<Vec<Tensor>> {
    let w = model.config.warmup;
    let act_dim = model.config.act_dim;
    let zero_act = vec![0.0; act_dim];
    let mut obs_w: Vec<Vec<f64>> = Vec::with_capacity(w);
    let mut act_w: Vec<Vec<f64>> = Vec::with_capacity(w);
    for i in 0..w {
        obs_w.push(obs_history.get(i).unwrap_or(&obs_history[0]).clone());
        act_w.push(act_history.get(i).unwrap_or(&zero_act).clone());
    }
    let mut state = model.init_state_values(&obs_w, &act_w)?;

    // Steps w-1 .. last-1 feed the cell; the final observation only seeds
    // imagination.
    let start = w.saturating_sub(1);
    for t in start..obs_history.len().saturating_sub(1) {
        let obs = Tensor::matrix(1, model.config.obs_dim, obs_history[t].clone())?;
        let act = if act_dim > 0 {
            Some(Tensor::matrix(
                1,
                act_dim,
                act_history
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| zero_act.clone()),
            )?)
        } else {
            None
        };
        let (_, new_state) = model.step_values(&state, &obs, act.as_ref())?;
        state = new_state;
    }
    Ok(state)
}

/// Score candidate action sequences by imagining them with the learned model
/// (batched across candidates).
fn score_with_model(
    model: &SeqModel,
    state: &[Tensor],
    last_obs: &[f64],
    population: &[Vec<Vec<f64>>],
    task: PlanTask,
) -> Result<Vec<f64>> {
    let n = population.len();
    let horizon = population[0].len();
    let act_dim = model.config.act_dim;
    let obs_dim = model.config.obs_dim;

    let tiled_state: Vec<Tensor> = state
        .iter()
        .map(|t| {
            let (_, cols) = t.dims2();
            let mut data = Vec::with_capacity(n * cols);
            for _ in 0..n {
                data.extend_from_slice(t.row(0));
            }
            Tensor::matrix(n, cols, data).unwrap()
        })
        .collect();
    let mut obs_data = Vec::with_capacity(n * obs_dim);
    for _ in 0..n {
        obs_data.extend_from_slice(last_obs);
    }
    let start_obs = Tensor::matrix(n, obs_dim, obs_data)?;
    let actions: Vec<Tensor> = (0..horizon)
        .map(|t| {
            let mut data = Vec::with_capacity(n * act_dim);
            for seq in population {
                data.extend_from_slice(&seq[t]);
            }
            Tensor::matrix(n, act_dim, data).unwrap()
        })
        .collect();

    let imagined = model.imagine(&tiled_state, &start_obs, &actions)?;
    let costs = (0..n)
        .map(|i| {
            let traj: Vec<Vec<f64>> = imagined.iter().map(|o| o.row(i).to_vec()).collect();
            task_cost(task, &traj)
        })
        .collect();
    Ok(costs)
}
