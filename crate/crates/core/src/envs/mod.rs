//! Partially observable environments, synthetic data-collection policies,
//! quota-balanced dataset generation, and dataset file I/O (JSON Lines plus a
//! manifest recording every constant that shaped the data).

pub mod billiard;
pub mod rrc;
pub mod shepherd;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use billiard::BilliardParams;
pub use rrc::RrcParams;
pub use shepherd::ShepherdParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Billiard,
    Rrc,
    Shepherd,
}

impl EnvKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "billiard" => Ok(EnvKind::Billiard),
            "rrc" => Ok(EnvKind::Rrc),
            "shepherd" => Ok(EnvKind::Shepherd),
            other => Err(Error::InvalidArgument(format!(
                "unknown environment '{other}' (valid: billiard, rrc, shepherd)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Billiard => "billiard",
            EnvKind::Rrc => "rrc",
            EnvKind::Shepherd => "shepherd",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Billiard => 2,
            EnvKind::Rrc => 4,
            EnvKind::Shepherd => 7,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::Billiard => 0,
            EnvKind::Rrc => 2,
            EnvKind::Shepherd => 3,
        }
    }

    /// Default episode length.
    pub fn seq_len(self) -> usize {
        match self {
            EnvKind::Billiard | EnvKind::Rrc => 50,
            EnvKind::Shepherd => 100,
        }
    }

    /// Default warm-up (inputs consumed by `f_init`).
    pub fn warmup(self) -> usize {
        match self {
            EnvKind::Billiard | EnvKind::Shepherd => 2,
            EnvKind::Rrc => 1,
        }
    }

    pub fn default_policy(self) -> PolicyKind {
        match self {
            EnvKind::Billiard => PolicyKind::Rand,
            EnvKind::Rrc => PolicyKind::Time,
            EnvKind::Shepherd => PolicyKind::Biased,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// I.i.d. uniform actions in `[-1, 1]`.
    Rand,
    /// Uniform actions scaled by a ramp rising linearly from 0.0001 to 1.0
    /// over the episode (spurious time-magnitude correlation).
    Time,
    /// Uniform actions with up/left bias in 75% of episodes.
    Biased,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rand" | "random" => Ok(PolicyKind::Rand),
            "time" => Ok(PolicyKind::Time),
            "biased" => Ok(PolicyKind::Biased),
            other => Err(Error::InvalidArgument(format!(
                "unknown policy '{other}' (valid: rand, time, biased)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rand => "rand",
            PolicyKind::Time => "time",
            PolicyKind::Biased => "biased",
        }
    }
}

/// Ramp factor for the time policy at step `t` of `len`.
pub fn time_ramp(t: usize, len: usize) -> f64 {
    if len <= 1 {
        return 1.0;
    }
    let lo = 1e-4;
    lo + (1.0 - lo) * t as f64 / (len - 1) as f64
}

/// Draw an open-loop action sequence for one episode.
pub fn collect_policy_actions(
    policy: PolicyKind,
    act_dim: usize,
    len: usize,
    rng: &mut RngStream,
) -> Vec<Vec<f64>> {
    if act_dim == 0 {
        return vec![Vec::new(); len];
    }
    match policy {
        PolicyKind::Rand => (0..len)
            .map(|_| (0..act_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect(),
        PolicyKind::Time => (0..len)
            .map(|t| {
                let ramp = time_ramp(t, len);
                (0..act_dim).map(|_| ramp * rng.uniform(-1.0, 1.0)).collect()
            })
            .collect(),
        PolicyKind::Biased => {
            let biased = rng.below(0.75);
            (0..len)
                .map(|_| {
                    (0..act_dim)
                        .map(|d| {
                            let v = rng.uniform(-1.0, 1.0);
                            if biased && d == 0 && rng.below(0.5) {
                                -v.abs() // left
                            } else if biased && d == 1 && rng.below(0.5) {
                                v.abs() // up
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Event annotations; step indices refer to the transition `obs[t] -> obs[t+1]`
/// driven by `act[t]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pocket_step: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bounce_steps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_onset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lever_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reappear_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caught_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sheep_x: Option<f64>,
}

/// One rollout: `obs[t]` is observed, `act[t]` is applied, and the resulting
/// state is observed as `obs[t+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub obs: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Event quotas the generated dataset must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BalanceSpec {
    None,
    /// At least this fraction of episodes ends in a pocket.
    Billiard { min_pocket: f64 },
    /// Exactly this fraction of episodes latches robot control.
    Rrc { control: f64 },
    /// Exactly these fractions activate the lever / catch the sheep
    /// (caught episodes count toward the lever fraction).
    Shepherd { lever: f64, caught: f64 },
}

impl BalanceSpec {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Billiard => BalanceSpec::Billiard { min_pocket: 0.15 },
            EnvKind::Rrc => BalanceSpec::Rrc { control: 0.5 },
            EnvKind::Shepherd => BalanceSpec::Shepherd {
                lever: 0.75,
                caught: 0.25,
            },
        }
    }
}

/// Geometry and physics constants recorded into manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum EnvParams {
    Billiard(BilliardParams),
    Rrc(RrcParams),
    Shepherd(ShepherdParams),
}

impl EnvParams {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Billiard => EnvParams::Billiard(BilliardParams::default()),
            EnvKind::Rrc => EnvParams::Rrc(RrcParams::default()),
            EnvKind::Shepherd => EnvParams::Shepherd(ShepherdParams::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvParams::Billiard(_) => EnvKind::Billiard,
            EnvParams::Rrc(_) => EnvKind::Rrc,
            EnvParams::Shepherd(_) => EnvKind::Shepherd,
        }
    }
}

/// Roll one episode with the given per-episode stream.
fn roll_episode(
    params: &EnvParams,
    policy: PolicyKind,
    len: usize,
    rng: &mut RngStream,
) -> Episode {
    let kind = params.kind();
    let actions = match params {
        EnvParams::Billiard(_) => vec![Vec::new(); len],
        _ => collect_policy_actions(policy, kind.act_dim(), len, rng),
    };
    let mut meta = EpisodeMeta::default();
    let mut obs = Vec::with_capacity(len);
    match params {
        EnvParams::Billiard(p) => {
            let mut state = billiard::reset(p, rng);
            for t in 0..len {
                obs.push(billiard::observe(&state));
                if t + 1 < len {
                    let ev = billiard::step(p, &mut state, 1.0);
                    if ev.bounced {
                        meta.bounce_steps.push(t);
                    }
                    if ev.pocketed {
                        meta.pocket_step = Some(t);
                    }
                }
            }
        }
        EnvParams::Rrc(p) => {
            let mut state = rrc::reset(p, rng);
            for t in 0..len {
                obs.push(rrc::observe(&state));
                if t + 1 < len {
                    let ev = rrc::step(p, &mut state, &actions[t]);
                    if ev.control_latched {
                        meta.control_onset = Some(t);
                    }
                }
            }
        }
        EnvParams::Shepherd(p) => {
            let mut state = shepherd::reset(p, rng);
            meta.sheep_x = Some(state.sheep[0]);
            for t in 0..len {
                obs.push(shepherd::observe(p, &state));
                if t + 1 < len {
                    let ev = shepherd::step(p, &mut state, &actions[t]);
                    if ev.lever_activated {
                        meta.lever_step = Some(t);
                    }
                    if ev.occluded {
                        meta.occlusion_step = Some(t);
                    }
                    if ev.reappeared {
                        meta.reappear_step = Some(t);
                    }
                    if ev.caught {
                        meta.caught_step = Some(t);
                    }
                }
            }
        }
    }
    Episode {
        id: 0,
        obs,
        act: actions,
        meta,
    }
}

fn round_count(fraction: f64, count: usize) -> usize {
    (fraction * count as f64).round() as usize
}

/// Rejection-sample episodes until the balance quotas are met. Deterministic
/// given the seed: attempt `i` always uses substream `1000 + i`.
pub fn generate_dataset(
    params: &EnvParams,
    policy: PolicyKind,
    count: usize,
    len: usize,
    balance: BalanceSpec,
    seed: u64,
) -> Result<Vec<Episode>> {
    if count == 0 || len < 2 {
        return Err(Error::InvalidArgument(
            "need a positive episode count and length of at least 2".into(),
        ));
    }
    let budget = 300 * count;
    let master = RngStream::new(seed);
    let mut episodes: Vec<Episode> = Vec::with_capacity(count);

    // Bucket targets: (label, remaining).
    let mut remaining: Vec<(u8, usize)> = match balance {
        BalanceSpec::None => vec![(0, count)],
        BalanceSpec::Billiard { min_pocket } => {
            // "At least": ceil so the achieved fraction cannot round below.
            let pockets = (min_pocket * count as f64).ceil() as usize;
            // Bucket 1 (pocket) may exceed its share by stealing from 0.
            vec![(0, count - pockets), (1, pockets)]
        }
        BalanceSpec::Rrc { control } => {
            let ctrl = round_count(control, count);
            vec![(0, count - ctrl), (1, ctrl)]
        }
        BalanceSpec::Shepherd { lever, caught } => {
            let caught_n = round_count(caught, count);
            let lever_n = round_count(lever, count);
            if caught_n > lever_n {
                return Err(Error::InvalidArgument(
                    "caught fraction cannot exceed lever fraction".into(),
                ));
            }
            vec![(0, count - lever_n), (1, lever_n - caught_n), (2, caught_n)]
        }
    };

    let mut accepted_by_label = [0usize; 3];
    for attempt in 0..budget {
        if episodes.len() == count {
            break;
        }
        let mut ep_rng = master.substream(1000 + attempt as u64);
        let mut ep = roll_episode(params, policy, len, &mut ep_rng);
        let label: u8 = match balance {
            BalanceSpec::None => 0,
            BalanceSpec::Billiard { .. } => ep.meta.pocket_step.is_some() as u8,
            BalanceSpec::Rrc { .. } => ep.meta.control_onset.is_some() as u8,
            BalanceSpec::Shepherd { .. } => {
                match (ep.meta.lever_step.is_some(), ep.meta.caught_step.is_some()) {
                    (false, false) => 0,
                    (true, false) => 1,
                    (true, true) => 2,
                    // A catch without the lever is off-script; skip it.
                    (false, true) => 255,
                }
            }
        };
        let accept = match balance {
            // Pockets are "at least": a pocket episode may also fill a plain
            // slot once its own bucket is full.
            BalanceSpec::Billiard { .. } if label == 1 => {
                if let Some(slot) = remaining.iter_mut().find(|(l, r)| *l == 1 && *r > 0) {
                    slot.1 -= 1;
                    true
                } else if let Some(slot) = remaining.iter_mut().find(|(l, r)| *l == 0 && *r > 0) {
                    slot.1 -= 1;
                    true
                } else {
                    false
                }
            }
            _ => match remaining.iter_mut().find(|(l, r)| *l == label && *r > 0) {
                Some(slot) => {
                    slot.1 -= 1;
                    true
                }
                None => false,
            },
        };
        if accept {
            ep.id = episodes.len() as u64;
            accepted_by_label[label.min(2) as usize] += 1;
            episodes.push(ep);
        }
    }

    if episodes.len() < count {
        return Err(Error::QuotaUnreachable {
            attempts: budget,
            achieved: format!(
                "{} of {count} episodes (bucket counts {:?}, open quotas {:?})",
                episodes.len(),
                accepted_by_label,
                remaining
            ),
        });
    }
    Ok(episodes)
}

// -- dataset file io ---------------------------------------------------------

/// Write one episode per line as JSON.
pub fn write_dataset(path: &Path, episodes: &[Episode]) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for ep in episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Episode>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut episodes = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if ep.obs.is_empty() {
            return Err(Error::DatasetParse {
                line: line_no,
                reason: "episode has no observations".into(),
            });
        }
        if ep.obs.len() != ep.act.len() {
            return Err(Error::DatasetParse {
                line: line_no,
                reason: format!(
                    "{} observations but {} actions",
                    ep.obs.len(),
                    ep.act.len()
                ),
            });
        }
        let d = (ep.obs.len(), ep.obs[0].len(), ep.act[0].len());
        if ep.obs.iter().any(|o| o.len() != d.1) || ep.act.iter().any(|a| a.len() != d.2) {
            return Err(Error::DatasetParse {
                line: line_no,
                reason: "inconsistent dimensions within episode".into(),
            });
        }
        match dims {
            None => dims = Some(d),
            Some(expect) if expect != d => {
                return Err(Error::DatasetParse {
                    line: line_no,
                    reason: format!("episode dims {d:?} differ from first line {expect:?}"),
                });
            }
            _ => {}
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

/// Per-dataset provenance record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub policy: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub count: usize,
    pub seq_len: usize,
    pub balance: BalanceSpec,
    pub params: EnvParams,
    pub achieved: AchievedFractions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AchievedFractions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pocket: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lever: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caught: Option<f64>,
}

pub fn achieved_fractions(kind: EnvKind, episodes: &[Episode]) -> AchievedFractions {
    let n = episodes.len().max(1) as f64;
    let frac = |f: &dyn Fn(&Episode) -> bool| episodes.iter().filter(|e| f(e)).count() as f64 / n;
    match kind {
        EnvKind::Billiard => AchievedFractions {
            pocket: Some(frac(&|e| e.meta.pocket_step.is_some())),
            ..Default::default()
        },
        EnvKind::Rrc => AchievedFractions {
            control: Some(frac(&|e| e.meta.control_onset.is_some())),
            ..Default::default()
        },
        EnvKind::Shepherd => AchievedFractions {
            lever: Some(frac(&|e| e.meta.lever_step.is_some())),
            caught: Some(frac(&|e| e.meta.caught_step.is_some())),
            ..Default::default()
        },
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}
