//! Experiment orchestration shared by the CLI: resolved run configurations,
//! dataset generation, training with CSV logging, evaluation, planning, and
//! sweeps. Every command writes its fully resolved configuration next to its
//! outputs so a run can be reproduced from the run directory alone.

use crate::analysis::{self, EvalOptions, MetricsReport};
use crate::cells::{CellConfig, GateL0rdConfig, GateVariant};
use crate::envs::{
    achieved_fractions, generate_dataset, read_dataset, write_dataset, write_manifest,
    BalanceSpec, EnvKind, EnvParams, Episode, Manifest, PolicyKind,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SeqModel};
use crate::planner::{mpc_run, ForwardModel, ICemConfig, PlanTask};
use crate::rng::RNG_ALGORITHM;
use crate::train::{train, LossReport, PenaltyKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

// -- resolved configuration ---------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: String,
    /// Data-collection policy; empty selects the environment default.
    pub policy: String,
    pub count: usize,
    /// Episode length; 0 selects the environment default.
    pub seq_len: usize,
    /// Quota overrides; NaN-free defaults come from the environment.
    pub pocket_fraction: Option<f64>,
    pub control_fraction: Option<f64>,
    pub lever_fraction: Option<f64>,
    pub caught_fraction: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            kind: "billiard".into(),
            policy: String::new(),
            count: 512,
            seq_len: 0,
            pocket_fraction: None,
            control_fraction: None,
            lever_fraction: None,
            caught_fraction: None,
        }
    }
}

impl EnvSection {
    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::parse(&self.kind)
    }

    pub fn policy_kind(&self, kind: EnvKind) -> Result<PolicyKind> {
        if self.policy.is_empty() {
            Ok(kind.default_policy())
        } else {
            PolicyKind::parse(&self.policy)
        }
    }

    pub fn effective_seq_len(&self, kind: EnvKind) -> usize {
        if self.seq_len == 0 {
            kind.seq_len()
        } else {
            self.seq_len
        }
    }

    pub fn balance(&self, kind: EnvKind) -> BalanceSpec {
        match kind {
            EnvKind::Billiard => BalanceSpec::Billiard {
                min_pocket: self.pocket_fraction.unwrap_or(0.15),
            },
            EnvKind::Rrc => BalanceSpec::Rrc {
                control: self.control_fraction.unwrap_or(0.5),
            },
            EnvKind::Shepherd => BalanceSpec::Shepherd {
                lever: self.lever_fraction.unwrap_or(0.75),
                caught: self.caught_fraction.unwrap_or(0.25),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub cell: String,
    pub hidden: usize,
    pub layers: usize,
    pub gate_variant: String,
    pub noise_variance: f64,
    pub output_gate: bool,
    /// Empty selects the per-environment default.
    pub f_pre: Vec<usize>,
    pub f_init: Vec<usize>,
    pub zero_init: bool,
    /// 0 selects the per-environment default warm-up.
    pub warmup: usize,
    pub residual_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            cell: "gatel0rd".into(),
            hidden: 8,
            layers: 1,
            gate_variant: "retanh-stochastic".into(),
            noise_variance: 0.1,
            output_gate: true,
            f_pre: Vec::new(),
            f_init: Vec::new(),
            zero_init: false,
            warmup: 0,
            residual_scale: 0.1,
        }
    }
}

impl ModelSection {
    pub fn cell_config(&self) -> Result<CellConfig> {
        match self.cell.as_str() {
            "gatel0rd" => {
                let mut cfg = GateL0rdConfig::new(self.hidden).with_layers(self.layers);
                cfg.gate_variant = GateVariant::parse(&self.gate_variant)?;
                cfg.noise_variance = self.noise_variance;
                cfg.output_gate = self.output_gate;
                Ok(CellConfig::Gatel0rd(cfg))
            }
            "gru" => Ok(CellConfig::Gru {
                hidden: self.hidden,
                layers: self.layers,
            }),
            "lstm" => Ok(CellConfig::Lstm {
                hidden: self.hidden,
                layers: self.layers,
            }),
            "elman" => Ok(CellConfig::Elman {
                hidden: self.hidden,
                layers: self.layers,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown cell '{other}' (valid: gatel0rd, gru, lstm, elman)"
            ))),
        }
    }

    /// Resolve into a full model architecture against dataset dimensions.
    pub fn model_config(
        &self,
        env: EnvKind,
        obs_dim: usize,
        act_dim: usize,
    ) -> Result<ModelConfig> {
        let f_pre = if self.f_pre.is_empty() {
            vec![32, 16]
        } else {
            self.f_pre.clone()
        };
        let f_init_hidden = if self.zero_init {
            None
        } else if self.f_init.is_empty() {
            Some(vec![32, 16])
        } else {
            Some(self.f_init.clone())
        };
        let warmup = if self.warmup == 0 {
            env.warmup()
        } else {
            self.warmup
        };
        Ok(ModelConfig {
            obs_dim,
            act_dim,
            f_pre_widths: f_pre,
            f_init_hidden,
            warmup,
            residual_scale: self.residual_scale,
            cell: self.cell_config()?,
        })
    }
}

/// Fully resolved run configuration; serialized next to every run's outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub dataset: String,
    /// Optional second dataset evaluated as the generalization set.
    pub gen_set: String,
    pub env: EnvSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub icem: ICemConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn infer_env_kind(episodes: &[Episode]) -> Result<EnvKind> {
    let obs = episodes[0].obs[0].len();
    let act = episodes[0].act[0].len();
    match (obs, act) {
        (2, 0) => Ok(EnvKind::Billiard),
        (4, 2) => Ok(EnvKind::Rrc),
        (7, 3) => Ok(EnvKind::Shepherd),
        _ => Err(Error::Incompatible(format!(
            "dataset dimensions obs={obs}, act={act} match no known environment"
        ))),
    }
}

// -- gen-data -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GenDataOutputs {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub episodes: usize,
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataOutputs> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let kind = cfg.env.env_kind()?;
    let policy = cfg.env.policy_kind(kind)?;
    let seq_len = cfg.env.effective_seq_len(kind);
    let balance = cfg.env.balance(kind);
    let params = EnvParams::default_for(kind);

    let dataset_path = out_dir.join("dataset.jsonl");
    let manifest_path = out_dir.join("manifest.json");

    let episodes = match generate_dataset(&params, policy, cfg.env.count, seq_len, balance, cfg.seed)
    {
        Ok(eps) => eps,
        Err(e) => {
            // Leave no partial dataset behind.
            let _ = fs::remove_file(&dataset_path);
            let _ = fs::remove_file(&manifest_path);
            return Err(e);
        }
    };

    write_dataset(&dataset_path, &episodes)?;
    let manifest = Manifest {
        env: kind.name().to_string(),
        policy: policy.name().to_string(),
        seed: cfg.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        count: episodes.len(),
        seq_len,
        balance,
        params,
        achieved: achieved_fractions(kind, &episodes),
    };
    write_manifest(&manifest_path, &manifest)?;
    cfg.save(&out_dir.join("resolved_config.json"))?;
    Ok(GenDataOutputs {
        dataset: dataset_path,
        manifest: manifest_path,
        episodes: episodes.len(),
    })
}

// -- train --------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_report: Option<LossReport>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs> {
    if cfg.dataset.is_empty() {
        return Err(Error::InvalidArgument("train needs a dataset path".into()));
    }
    let episodes = read_dataset(Path::new(&cfg.dataset))?;
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let env = infer_env_kind(&episodes)?;
    let obs_dim = episodes[0].obs[0].len();
    let act_dim = episodes[0].act[0].len();

    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let model_config = cfg.model.model_config(env, obs_dim, act_dim)?;
    let mut model = model_config.build(cfg.seed)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;

    let log_path = out_dir.join("train_log.csv");
    let ckpt_path = out_dir.join("checkpoint.json");
    cfg.save(&out_dir.join("resolved_config.json"))?;

    let log_file =
        fs::File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = std::io::BufWriter::new(log_file);
    writeln!(
        log,
        "epoch,task_loss,gate_penalty,total_loss,gate_open_rate,p_i,wall_ms"
    )
    .map_err(|e| Error::io(log_path.display().to_string(), e))?;

    let mut log_err: Option<std::io::Error> = None;
    let result = {
        let mut on_epoch = |epoch: usize, report: &LossReport, p_i: f64, wall_ms: f64| {
            if let Err(e) = writeln!(
                log,
                "{epoch},{},{},{},{},{p_i},{wall_ms:.3}",
                report.task_loss, report.gate_penalty, report.total_loss, report.gate_open_rate
            ) {
                log_err.get_or_insert(e);
            }
        };
        train(&mut model, &episodes, &train_cfg, Some(&mut on_epoch))
    };
    log.flush()
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    if let Some(e) = log_err {
        return Err(Error::io(log_path.display().to_string(), e));
    }

    match result {
        Ok(history) => {
            model.save(&ckpt_path)?;
            Ok(TrainOutputs {
                checkpoint: ckpt_path,
                log: log_path,
                final_report: history.last().cloned(),
            })
        }
        Err(e) => {
            // Divergence rolls the parameters back; keep that checkpoint.
            model.save(&ckpt_path)?;
            Err(e)
        }
    }
}

// -- eval ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub test: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalization: Option<MetricsReport>,
    /// generalization MSE / test MSE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalization_ratio: Option<f64>,
}

pub fn eval_options_for(env: EnvKind) -> EvalOptions<'static> {
    match env {
        EnvKind::Rrc => EvalOptions {
            event_step: Some(&|e: &Episode| e.meta.control_onset),
            sheep_x_slot: None,
        },
        EnvKind::Shepherd => EvalOptions {
            event_step: Some(&|e: &Episode| e.meta.reappear_step),
            sheep_x_slot: Some(3),
        },
        EnvKind::Billiard => EvalOptions::default(),
    }
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, export_traces: usize) -> Result<EvalSummary> {
    let model = SeqModel::load(checkpoint)?;
    let episodes = read_dataset(Path::new(&cfg.dataset))?;
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let obs_dim = episodes[0].obs[0].len();
    let act_dim = episodes[0].act[0].len();
    if obs_dim != model.config.obs_dim || act_dim != model.config.act_dim {
        return Err(Error::Incompatible(format!(
            "checkpoint expects obs={}, act={}, dataset has obs={obs_dim}, act={act_dim}",
            model.config.obs_dim, model.config.act_dim
        )));
    }
    let env = infer_env_kind(&episodes)?;
    let options = eval_options_for(env);

    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;

    let test = analysis::evaluate(&model, &episodes, &options)?;
    let mut summary = EvalSummary {
        test,
        generalization: None,
        generalization_ratio: None,
    };
    if !cfg.gen_set.is_empty() {
        let gen_eps = read_dataset(Path::new(&cfg.gen_set))?;
        let gen = analysis::evaluate(&model, &gen_eps, &options)?;
        summary.generalization_ratio = if summary.test.nstep_mse_mean > 0.0 {
            Some(gen.nstep_mse_mean / summary.test.nstep_mse_mean)
        } else {
            None
        };
        summary.generalization = Some(gen);
    }

    if export_traces > 0 {
        let trace_dir = out_dir.join("traces");
        ensure_dir(&trace_dir)?;
        export_latent_traces(&model, &episodes, export_traces, &trace_dir)?;
    }

    let json = serde_json::to_string_pretty(&summary)?;
    let metrics_path = out_dir.join("metrics.json");
    fs::write(&metrics_path, json)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    cfg.save(&out_dir.join("resolved_config.json"))?;
    Ok(summary)
}

/// Teacher-fed latent trace CSVs for the first `count` episodes.
pub fn export_latent_traces(
    model: &SeqModel,
    episodes: &[Episode],
    count: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    use crate::cells::Mode;
    use crate::model::{batch_episodes, Feed};
    let mut paths = Vec::new();
    for (idx, ep) in episodes.iter().take(count).enumerate() {
        let batch = batch_episodes(&[&ep.obs], &[&ep.act], model.config.act_dim)?;
        let mut rng = crate::rng::RngStream::new(0);
        let rollout = model.forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)?;
        let trace = rollout.trace();
        let predicted: Vec<Vec<f64>> = rollout
            .predicted_obs(model.config.residual_scale)
            .iter()
            .map(|t| t.row(0).to_vec())
            .collect();
        let path = out_dir.join(format!("trace_ep{idx:04}.csv"));
        analysis::export_latent_trace(&trace, 0, &predicted, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

// -- plan ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSummary {
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Standard error of the success rate.
    pub stderr: f64,
    pub mean_steps: f64,
}

pub fn cmd_plan(
    cfg: &RunConfig,
    task: PlanTask,
    checkpoint: Option<&Path>,
    episodes: usize,
) -> Result<PlanSummary> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let model = match checkpoint {
        Some(path) => {
            let m = SeqModel::load(path)?;
            let expect = match task {
                PlanTask::Rrc => (4, 2),
                PlanTask::Shepherd => (7, 3),
            };
            if (m.config.obs_dim, m.config.act_dim) != expect {
                return Err(Error::Incompatible(format!(
                    "checkpoint obs={}, act={} does not fit task {}",
                    m.config.obs_dim,
                    m.config.act_dim,
                    match task {
                        PlanTask::Rrc => "rrc",
                        PlanTask::Shepherd => "shepherd",
                    }
                )));
            }
            Some(m)
        }
        None => None,
    };

    let mut successes = 0usize;
    let mut steps_sum = 0usize;
    for ep in 0..episodes {
        let seed = cfg.seed.wrapping_add(ep as u64);
        let forward = match &model {
            Some(m) => ForwardModel::Learned(m),
            None => ForwardModel::GroundTruth,
        };
        let outcome = mpc_run(task, &forward, &cfg.icem, seed)?;
        if outcome.success {
            successes += 1;
        }
        steps_sum += outcome.steps_taken;

        let log_path = out_dir.join(format!("plan_ep{ep:03}.csv"));
        let file = fs::File::create(&log_path)
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "step,iter,best_cost,elite_mean,elite_std")
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        for row in &outcome.plan_log {
            writeln!(
                w,
                "{},{},{},{},{}",
                row.step, row.iter, row.best_cost, row.elite_mean, row.elite_std
            )
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        }
    }

    let n = episodes.max(1) as f64;
    let rate = successes as f64 / n;
    let summary = PlanSummary {
        task: match task {
            PlanTask::Rrc => "rrc".into(),
            PlanTask::Shepherd => "shepherd".into(),
        },
        episodes,
        successes,
        success_rate: rate,
        stderr: (rate * (1.0 - rate) / n).sqrt(),
        mean_steps: steps_sum as f64 / n,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    let path = out_dir.join("plan_summary.json");
    fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    cfg.save(&out_dir.join("resolved_config.json"))?;
    Ok(summary)
}

// -- sweep --------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub lambda: f64,
    pub seed: u64,
    pub status: String,
    pub task_loss: f64,
    pub gate_open_rate: f64,
    pub nstep_mse: f64,
    pub dims_changed: f64,
}

/// Cross product of (cell, lambda, seed) trained and evaluated in isolated
/// run directories. Completed children (metrics.json present) are skipped, so
/// an interrupted sweep resumes. Child failures are recorded and the sweep
/// continues.
pub fn cmd_sweep(
    base: &RunConfig,
    cells: &[String],
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<PathBuf> {
    if cells.is_empty() || lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let out_dir = PathBuf::from(&base.out_dir);
    ensure_dir(&out_dir)?;
    let mut rows = Vec::new();

    for cell in cells {
        for &lambda in lambdas {
            for &seed in seeds {
                let run_name = format!("{cell}_lam{lambda}_s{seed}");
                let run_dir = out_dir.join("runs").join(&run_name);
                let mut child = base.clone();
                child.model.cell = cell.clone();
                child.train.lambda = lambda;
                child.seed = seed;
                child.out_dir = run_dir.display().to_string();

                let metrics_path = run_dir.join("metrics.json");
                let row = if metrics_path.exists() {
                    match read_sweep_metrics(&metrics_path, cell, lambda, seed) {
                        Ok(row) => row,
                        Err(_) => run_sweep_child(&child, cell, lambda, seed),
                    }
                } else {
                    run_sweep_child(&child, cell, lambda, seed)
                };
                rows.push(row);
            }
        }
    }

    let csv_path = out_dir.join("sweep_results.csv");
    let file =
        fs::File::create(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "cell,lambda,seed,status,task_loss,gate_open_rate,nstep_mse,dims_changed"
    )
    .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.cell, r.lambda, r.seed, r.status, r.task_loss, r.gate_open_rate, r.nstep_mse,
            r.dims_changed
        )
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    base.save(&out_dir.join("resolved_config.json"))?;
    Ok(csv_path)
}

fn run_sweep_child(child: &RunConfig, cell: &str, lambda: f64, seed: u64) -> SweepRow {
    let failed = |msg: String| SweepRow {
        cell: cell.to_string(),
        lambda,
        seed,
        status: format!("failed: {msg}"),
        task_loss: f64::NAN,
        gate_open_rate: f64::NAN,
        nstep_mse: f64::NAN,
        dims_changed: f64::NAN,
    };
    let outputs = match cmd_train(child) {
        Ok(o) => o,
        Err(e) => return failed(e.to_string()),
    };
    match cmd_eval(child, &outputs.checkpoint, 0) {
        Ok(summary) => SweepRow {
            cell: cell.to_string(),
            lambda,
            seed,
            status: "ok".into(),
            task_loss: outputs.final_report.as_ref().map_or(f64::NAN, |r| r.task_loss),
            gate_open_rate: summary.test.gate_open_rate,
            nstep_mse: summary.test.nstep_mse_mean,
            dims_changed: summary.test.dims_changed_mean,
        },
        Err(e) => failed(e.to_string()),
    }
}

fn read_sweep_metrics(path: &Path, cell: &str, lambda: f64, seed: u64) -> Result<SweepRow> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let summary: EvalSummary = serde_json::from_str(&text)?;
    Ok(SweepRow {
        cell: cell.to_string(),
        lambda,
        seed,
        status: "ok (cached)".into(),
        task_loss: f64::NAN,
        gate_open_rate: summary.test.gate_open_rate,
        nstep_mse: summary.test.nstep_mse_mean,
        dims_changed: summary.test.dims_changed_mean,
    })
}

// -- export-latents -----------------------------------------------------------

pub fn cmd_export_latents(
    cfg: &RunConfig,
    checkpoint: &Path,
    count: usize,
) -> Result<Vec<PathBuf>> {
    let model = SeqModel::load(checkpoint)?;
    let episodes = read_dataset(Path::new(&cfg.dataset))?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let paths = export_latent_traces(&model, &episodes, count.min(episodes.len()), &out_dir)?;
    cfg.save(&out_dir.join("resolved_config.json"))?;
    Ok(paths)
}

// -- helpers used by tests and the CLI ----------------------------------------

/// Quick dataset generation into memory with per-environment defaults.
pub fn quick_dataset(kind: EnvKind, count: usize, seed: u64) -> Result<Vec<Episode>> {
    let params = EnvParams::default_for(kind);
    generate_dataset(
        &params,
        kind.default_policy(),
        count,
        kind.seq_len(),
        BalanceSpec::default_for(kind),
        seed,
    )
}

/// Parse a penalty string the same way the CLI does.
pub fn parse_penalty(s: &str) -> Result<PenaltyKind> {
    PenaltyKind::parse(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{"seed": 1, "bogus_key": true}"#;
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let json = r#"{"seed": 3, "env": {"kind": "rrc"}}"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.env.kind, "rrc");
        assert_eq!(cfg.env.count, 512);
        assert_eq!(cfg.model.hidden, 8);
    }

    #[test]
    fn gen_data_writes_dataset_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: 5,
            out_dir: dir.path().display().to_string(),
            env: EnvSection {
                kind: "billiard".into(),
                count: 16,
                seq_len: 20,
                ..EnvSection::default()
            },
            ..RunConfig::default()
        };
        let out = cmd_gen_data(&cfg).unwrap();
        assert_eq!(out.episodes, 16);
        assert!(out.dataset.exists());
        assert!(out.manifest.exists());
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&out.manifest).unwrap()).unwrap();
        assert_eq!(manifest.env, "billiard");
        assert_eq!(manifest.count, 16);
        assert!(manifest.achieved.pocket.unwrap() >= 0.15);
    }

    #[test]
    fn gen_data_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let make = |sub: &str| {
            let cfg = RunConfig {
                seed: 7,
                out_dir: dir.path().join(sub).display().to_string(),
                env: EnvSection {
                    kind: "rrc".into(),
                    count: 12,
                    seq_len: 16,
                    ..EnvSection::default()
                },
                ..RunConfig::default()
            };
            cmd_gen_data(&cfg).unwrap().dataset
        };
        let a = make("a");
        let b = make("b");
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn train_then_eval_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let gen_cfg = RunConfig {
            seed: 11,
            out_dir: data_dir.display().to_string(),
            env: EnvSection {
                kind: "billiard".into(),
                count: 8,
                seq_len: 12,
                ..EnvSection::default()
            },
            ..RunConfig::default()
        };
        let data = cmd_gen_data(&gen_cfg).unwrap();

        let run_dir = dir.path().join("run");
        let cfg = RunConfig {
            seed: 11,
            out_dir: run_dir.display().to_string(),
            dataset: data.dataset.display().to_string(),
            model: ModelSection {
                hidden: 4,
                f_pre: vec![6],
                f_init: vec![6],
                ..ModelSection::default()
            },
            train: TrainConfig {
                epochs: 3,
                batch_size: 4,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        let out = cmd_train(&cfg).unwrap();
        assert!(out.checkpoint.exists());
        assert!(out.log.exists());
        let log = fs::read_to_string(&out.log).unwrap();
        assert!(log.starts_with("epoch,task_loss,gate_penalty,total_loss,gate_open_rate,p_i,wall_ms"));
        assert_eq!(log.lines().count(), 4);

        let summary = cmd_eval(&cfg, &out.checkpoint, 2).unwrap();
        assert!(summary.test.nstep_mse_mean.is_finite());
        assert!(run_dir.join("metrics.json").exists());
        assert!(run_dir.join("traces").join("trace_ep0000.csv").exists());
    }

    #[test]
    fn eval_rejects_mismatched_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        // Train a tiny billiard model, then try to eval on an RRC dataset.
        let bd = RunConfig {
            seed: 2,
            out_dir: dir.path().join("bdata").display().to_string(),
            env: EnvSection {
                kind: "billiard".into(),
                count: 6,
                seq_len: 10,
                ..EnvSection::default()
            },
            ..RunConfig::default()
        };
        let bdata = cmd_gen_data(&bd).unwrap();
        let rd = RunConfig {
            seed: 2,
            out_dir: dir.path().join("rdata").display().to_string(),
            env: EnvSection {
                kind: "rrc".into(),
                count: 6,
                seq_len: 10,
                ..EnvSection::default()
            },
            ..RunConfig::default()
        };
        let rdata = cmd_gen_data(&rd).unwrap();

        let cfg = RunConfig {
            seed: 2,
            out_dir: dir.path().join("run").display().to_string(),
            dataset: bdata.dataset.display().to_string(),
            model: ModelSection {
                hidden: 3,
                f_pre: vec![4],
                f_init: vec![4],
                ..ModelSection::default()
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        let out = cmd_train(&cfg).unwrap();
        let mut eval_cfg = cfg.clone();
        eval_cfg.dataset = rdata.dataset.display().to_string();
        let err = cmd_eval(&eval_cfg, &out.checkpoint, 0).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
    }
}
