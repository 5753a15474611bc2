//! Recurrent cells: the GateL0RD cell with stochastic ReTanh gating and its
//! ablation variants, plus GRU, LSTM, and Elman baselines (optionally
//! stacked).
//!
//! The GateL0RD step is
//!
//! ```text
//! s      = g(x, h) + eps          eps ~ N(0, sigma^2 I) while training
//! lambda = max(0, tanh(s))
//! h'     = h + lambda (.) (r(x, h) - h)
//! y      = p(x, h') (.) o(x, h')
//! ```
//!
//! Wherever `lambda = 0` the latent dimension is copied bit-exactly, so the
//! binarized opening `theta = step(lambda)` doubles as the L0 count of latent
//! changes.

use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp, MlpSpec};
use crate::optim::ParamStore;
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gate activation variants (the deterministic, sigmoid, and heaviside forms
/// are ablations of the stochastic ReTanh default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateVariant {
    RetanhStochastic,
    RetanhDeterministic,
    Sigmoid,
    HeavisideSte,
}

impl GateVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retanh-stochastic" | "retanh" => Ok(GateVariant::RetanhStochastic),
            "retanh-deterministic" => Ok(GateVariant::RetanhDeterministic),
            "sigmoid" => Ok(GateVariant::Sigmoid),
            "heaviside-ste" | "heaviside" => Ok(GateVariant::HeavisideSte),
            other => Err(Error::InvalidArgument(format!(
                "unknown gate variant '{other}' (valid: retanh-stochastic, retanh-deterministic, sigmoid, heaviside-ste)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateL0rdConfig {
    pub hidden: usize,
    /// Hidden widths of the gating network `g` (its final linear layer to
    /// `hidden` is implied). Up to two entries, mirroring 1-3 layer setups.
    pub g_hidden: Vec<usize>,
    /// Hidden widths of the recommendation network `r`.
    pub r_hidden: Vec<usize>,
    pub gate_variant: GateVariant,
    pub noise_variance: f64,
    /// `false` drops the sigmoidal `o` branch (plain-output ablation).
    pub output_gate: bool,
}

impl GateL0rdConfig {
    pub fn new(hidden: usize) -> Self {
        GateL0rdConfig {
            hidden,
            g_hidden: Vec::new(),
            r_hidden: Vec::new(),
            gate_variant: GateVariant::RetanhStochastic,
            noise_variance: 0.1,
            output_gate: true,
        }
    }

    /// `layers`-deep `g`/`r` networks (1 to 3), intermediate width `2 * hidden`.
    pub fn with_layers(mut self, layers: usize) -> Self {
        let mid = vec![2 * self.hidden; layers.saturating_sub(1)];
        self.g_hidden = mid.clone();
        self.r_hidden = mid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("latent dim must be positive".into()));
        }
        if self.g_hidden.len() > 2 || self.r_hidden.len() > 2 {
            return Err(Error::InvalidArgument(
                "g and r networks support at most 3 layers".into(),
            ));
        }
        if self.noise_variance < 0.0 {
            return Err(Error::InvalidArgument(
                "gate noise variance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn g_spec(&self) -> MlpSpec {
        let mut widths = self.g_hidden.clone();
        widths.push(self.hidden);
        MlpSpec::new(widths, Activation::Linear)
    }

    fn r_spec(&self) -> MlpSpec {
        let mut widths = self.r_hidden.clone();
        widths.push(self.hidden);
        MlpSpec::new(widths, Activation::Tanh)
    }
}

/// Cell architecture selector, serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CellConfig {
    Gatel0rd(GateL0rdConfig),
    Gru { hidden: usize, layers: usize },
    Lstm { hidden: usize, layers: usize },
    Elman { hidden: usize, layers: usize },
}

impl CellConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CellConfig::Gatel0rd(_) => "gatel0rd",
            CellConfig::Gru { .. } => "gru",
            CellConfig::Lstm { .. } => "lstm",
            CellConfig::Elman { .. } => "elman",
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            CellConfig::Gatel0rd(c) => c.hidden,
            CellConfig::Gru { hidden, .. }
            | CellConfig::Lstm { hidden, .. }
            | CellConfig::Elman { hidden, .. } => *hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellConfig::Gatel0rd(c) => c.validate(),
            CellConfig::Gru { hidden, layers }
            | CellConfig::Lstm { hidden, layers }
            | CellConfig::Elman { hidden, layers } => {
                if *hidden == 0 {
                    return Err(Error::InvalidArgument("latent dim must be positive".into()));
                }
                if *layers == 0 || *layers > 3 {
                    return Err(Error::InvalidArgument(format!(
                        "stacked cells support 1 to 3 layers, got {layers}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Gate internals recorded at one step.
pub struct GateStepVars {
    pub s: Var,
    pub lam: Var,
    pub theta: Var,
}

pub struct CellStep {
    pub y: Var,
    pub state: Vec<Var>,
    pub gate: Option<GateStepVars>,
}

pub struct GateL0rdCell {
    pub hidden: usize,
    pub variant: GateVariant,
    pub noise_variance: f64,
    g: Mlp,
    r: Mlp,
    p: Mlp,
    o: Option<Mlp>,
}

pub struct GruLayer {
    update: Mlp,
    reset: Mlp,
    cand: Mlp,
}

pub struct LstmLayer {
    input_gate: Mlp,
    forget_gate: Mlp,
    output_gate: Mlp,
    cand: Mlp,
}

pub struct ElmanLayer {
    lin: Mlp,
}

pub enum Cell {
    GateL0rd(GateL0rdCell),
    Gru { hidden: usize, layers: Vec<GruLayer> },
    Lstm { hidden: usize, layers: Vec<LstmLayer> },
    Elman { hidden: usize, layers: Vec<ElmanLayer> },
}

impl Cell {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngStream,
        in_dim: usize,
        config: &CellConfig,
    ) -> Result<Self> {
        config.validate()?;
        match config {
            CellConfig::Gatel0rd(c) => {
                let xh = in_dim + c.hidden;
                let g = Mlp::init(store, rng, "cell.g", xh, c.g_spec())?;
                let r = Mlp::init(store, rng, "cell.r", xh, c.r_spec())?;
                let p = Mlp::init(
                    store,
                    rng,
                    "cell.p",
                    xh,
                    MlpSpec::new(vec![c.hidden], Activation::Tanh),
                )?;
                let o = if c.output_gate {
                    Some(Mlp::init(
                        store,
                        rng,
                        "cell.o",
                        xh,
                        MlpSpec::new(vec![c.hidden], Activation::Sigmoid),
                    )?)
                } else {
                    None
                };
                Ok(Cell::GateL0rd(GateL0rdCell {
                    hidden: c.hidden,
                    variant: c.gate_variant,
                    noise_variance: c.noise_variance,
                    g,
                    r,
                    p,
                    o,
                }))
            }
            CellConfig::Gru { hidden, layers } => {
                let mut ls = Vec::with_capacity(*layers);
                let mut dim = in_dim;
                for l in 0..*layers {
                    let xh = dim + hidden;
                    ls.push(GruLayer {
                        update: Mlp::init(
                            store,
                            rng,
                            &format!("cell.{l}.z"),
                            xh,
                            MlpSpec::new(vec![*hidden], Activation::Sigmoid),
                        )?,
                        reset: Mlp::init(
                            store,
                            rng,
                            &format!("cell.{l}.r"),
                            xh,
                            MlpSpec::new(vec![*hidden], Activation::Sigmoid),
                        )?,
                        cand: Mlp::init(
                            store,
                            rng,
                            &format!("cell.{l}.c"),
                            xh,
                            MlpSpec::new(vec![*hidden], Activation::Tanh),
                        )?,
                    });
                    dim = *hidden;
                }
                Ok(Cell::Gru {
                    hidden: *hidden,
                    layers: ls,
                })
            }
            CellConfig::Lstm { hidden, layers } => {
                let mut ls = Vec::with_capacity(*layers);
                let mut dim = in_dim;
                for l in 0..*layers {
                    let xh = dim + hidden;
                    let gate = |store: &mut ParamStore, rng: &mut RngStream, name: String, act| {
                        Mlp::init(store, rng, &name, xh, MlpSpec::new(vec![*hidden], act))
                    };
                    ls.push(LstmLayer {
                        input_gate: gate(store, rng, format!("cell.{l}.i"), Activation::Sigmoid)?,
                        forget_gate: gate(store, rng, format!("cell.{l}.f"), Activation::Sigmoid)?,
                        output_gate: gate(store, rng, format!("cell.{l}.o"), Activation::Sigmoid)?,
                        cand: gate(store, rng, format!("cell.{l}.c"), Activation::Tanh)?,
                    });
                    dim = *hidden;
                }
                Ok(Cell::Lstm {
                    hidden: *hidden,
                    layers: ls,
                })
            }
            CellConfig::Elman { hidden, layers } => {
                let mut ls = Vec::with_capacity(*layers);
                let mut dim = in_dim;
                for l in 0..*layers {
                    let xh = dim + hidden;
                    ls.push(ElmanLayer {
                        lin: Mlp::init(
                            store,
                            rng,
                            &format!("cell.{l}.h"),
                            xh,
                            MlpSpec::new(vec![*hidden], Activation::Tanh),
                        )?,
                    });
                    dim = *hidden;
                }
                Ok(Cell::Elman {
                    hidden: *hidden,
                    layers: ls,
                })
            }
        }
    }

    /// Width of the flat state vector `f_init` produces (LSTMs carry both a
    /// hidden and a cell vector per layer).
    pub fn state_dim(&self) -> usize {
        match self {
            Cell::GateL0rd(c) => c.hidden,
            Cell::Gru { hidden, layers } => hidden * layers.len(),
            Cell::Elman { hidden, layers } => hidden * layers.len(),
            Cell::Lstm { hidden, layers } => 2 * hidden * layers.len(),
        }
    }

    /// Width of the latent state reported in traces (cell states for LSTMs).
    pub fn latent_dim(&self) -> usize {
        match self {
            Cell::GateL0rd(c) => c.hidden,
            Cell::Gru { hidden, layers } => hidden * layers.len(),
            Cell::Lstm { hidden, layers } => hidden * layers.len(),
            Cell::Elman { hidden, layers } => hidden * layers.len(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Cell::GateL0rd(c) => c.hidden,
            Cell::Gru { hidden, .. } | Cell::Lstm { hidden, .. } | Cell::Elman { hidden, .. } => {
                *hidden
            }
        }
    }

    /// Split a flat `[B, state_dim]` initialization into state components.
    pub fn split_state(&self, tape: &mut Tape, flat: Var) -> Result<Vec<Var>> {
        let per: Vec<usize> = match self {
            Cell::GateL0rd(c) => vec![c.hidden],
            Cell::Gru { hidden, layers } => vec![*hidden; layers.len()],
            Cell::Elman { hidden, layers } => vec![*hidden; layers.len()],
            Cell::Lstm { hidden, layers } => vec![*hidden; 2 * layers.len()],
        };
        if per.len() == 1 {
            return Ok(vec![flat]);
        }
        let mut out = Vec::with_capacity(per.len());
        let mut start = 0;
        for len in per {
            out.push(tape.slice_cols(flat, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// The state components that constitute the reported latent state.
    pub fn latent_components<'s>(&self, state: &'s [Var]) -> Vec<Var> {
        match self {
            Cell::GateL0rd(_) | Cell::Gru { .. } | Cell::Elman { .. } => state.to_vec(),
            // state layout per layer: [h, c]; report cell states.
            Cell::Lstm { .. } => state.iter().skip(1).step_by(2).copied().collect(),
        }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        x: Var,
        state: &[Var],
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<CellStep> {
        match self {
            Cell::GateL0rd(cell) => cell.step(tape, bound, x, state[0], mode, rng),
            Cell::Gru { layers, .. } => {
                let mut input = x;
                let mut new_state = Vec::with_capacity(layers.len());
                for (layer, &h) in layers.iter().zip(state) {
                    let xh = tape.concat_cols(&[input, h])?;
                    let z = layer.update.forward(tape, bound, xh)?;
                    let r = layer.reset.forward(tape, bound, xh)?;
                    let rh = tape.mul(r, h)?;
                    let xrh = tape.concat_cols(&[input, rh])?;
                    let cand = layer.cand.forward(tape, bound, xrh)?;
                    let h_new = tape.gate_lerp(h, cand, z)?;
                    new_state.push(h_new);
                    input = h_new;
                }
                Ok(CellStep {
                    y: input,
                    state: new_state,
                    gate: None,
                })
            }
            Cell::Lstm { layers, .. } => {
                let mut input = x;
                let mut new_state = Vec::with_capacity(2 * layers.len());
                for (l, layer) in layers.iter().enumerate() {
                    let h = state[2 * l];
                    let c = state[2 * l + 1];
                    let xh = tape.concat_cols(&[input, h])?;
                    let i = layer.input_gate.forward(tape, bound, xh)?;
                    let f = layer.forget_gate.forward(tape, bound, xh)?;
                    let og = layer.output_gate.forward(tape, bound, xh)?;
                    let cand = layer.cand.forward(tape, bound, xh)?;
                    let fc = tape.mul(f, c)?;
                    let ic = tape.mul(i, cand)?;
                    let c_new = tape.add(fc, ic)?;
                    let tc = tape.tanh(c_new);
                    let h_new = tape.mul(og, tc)?;
                    new_state.push(h_new);
                    new_state.push(c_new);
                    input = h_new;
                }
                Ok(CellStep {
                    y: input,
                    state: new_state,
                    gate: None,
                })
            }
            Cell::Elman { layers, .. } => {
                let mut input = x;
                let mut new_state = Vec::with_capacity(layers.len());
                for (layer, &h) in layers.iter().zip(state) {
                    let xh = tape.concat_cols(&[input, h])?;
                    let h_new = layer.lin.forward(tape, bound, xh)?;
                    new_state.push(h_new);
                    input = h_new;
                }
                Ok(CellStep {
                    y: input,
                    state: new_state,
                    gate: None,
                })
            }
        }
    }

    pub fn is_gated(&self) -> bool {
        matches!(self, Cell::GateL0rd(_))
    }
}

impl GateL0rdCell {
    fn step(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        x: Var,
        h_prev: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<CellStep> {
        let xh = tape.concat_cols(&[x, h_prev])?;
        let s_mean = self.g.forward(tape, bound, xh)?;
        // Gate noise is a training-time regularizer; evaluation and the
        // deterministic ablation force eps = 0.
        let s = if mode == Mode::Train && self.variant != GateVariant::RetanhDeterministic {
            tape.gaussian_noise(s_mean, self.noise_variance, rng)?
        } else {
            s_mean
        };
        let lam = match self.variant {
            GateVariant::RetanhStochastic | GateVariant::RetanhDeterministic => tape.retanh(s),
            GateVariant::Sigmoid => tape.sigmoid(s),
            GateVariant::HeavisideSte => tape.heaviside_ste(s),
        };
        let cand = self.r.forward(tape, bound, xh)?;
        let h = tape.gate_lerp(h_prev, cand, lam)?;
        let xh2 = tape.concat_cols(&[x, h])?;
        let p_out = self.p.forward(tape, bound, xh2)?;
        let y = match &self.o {
            Some(o) => {
                let o_out = o.forward(tape, bound, xh2)?;
                tape.mul(p_out, o_out)?
            }
            None => p_out,
        };
        let theta = tape.heaviside_ste(lam);
        Ok(CellStep {
            y,
            state: vec![h],
            gate: Some(GateStepVars { s, lam, theta }),
        })
    }
}
