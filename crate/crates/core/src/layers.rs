//! Feature assembly, the LSTM transition, the skip-gated LSTM step, and the
//! bidirectional encoder with the skip-union rule.
//!
//! The skip cell keeps a running update probability `ũ` per direction:
//!
//! ```text
//! u_t      = round(ũ_t)                                   (straight-through)
//! s_t      = u_t · S(s_{t-1}, x_t) + (1 - u_t) · s_{t-1}
//! Δũ_t     = σ(W_p · h_t + b_p)
//! ũ_{t+1}  = u_t · Δũ_t + (1 - u_t) · min(ũ_t + Δũ_t, 1)
//! ```
//!
//! where `s = (h, c)` is gated as a pair. A token is remained only when both
//! directions update on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub pct_dim: usize,
    pub hidden_dim: usize,
}

impl FeatureConfig {
    /// The current-percentage mask is a single raw column.
    pub const MASK_DIM: usize = 1;

    pub fn new(word_dim: usize) -> Self {
        FeatureConfig {
            word_dim,
            pos_dim: 25,
            pct_dim: 5,
            hidden_dim: 50,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.pct_dim + Self::MASK_DIM
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("pct_dim", self.pct_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    key: key.into(),
                    message: "must be > 0".into(),
                });
            }
        }
        Ok(())
    }
}

/// Per-token inputs of one instance, with the frozen word vectors already
/// looked up.
#[derive(Clone, Debug)]
pub struct TokenFeatures {
    pub words: Tensor,
    pub pos_ids: Vec<usize>,
    pub pct_indicator: Vec<u8>,
    pub mask: Vec<u8>,
}

impl TokenFeatures {
    pub fn len(&self) -> usize {
        self.pos_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_ids.is_empty()
    }
}

/// `[word ; pos ; pct-indicator ; mask]` per token. Word vectors enter as
/// constants so they never receive gradient.
pub fn embed(g: &mut Graph, feats: &TokenFeatures, pos_table: Var, pct_table: Var) -> Result<Var> {
    let t = feats.len();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if feats.words.rows() != t || feats.pct_indicator.len() != t || feats.mask.len() != t {
        return Err(Error::LengthMismatch {
            what: "token features",
            left: t,
            right: feats.words.rows(),
        });
    }
    let pos_rows = g.shape(pos_table).0;
    if let Some(&bad) = feats.pos_ids.iter().find(|&&id| id >= pos_rows) {
        return Err(Error::Data(format!("unknown POS tag id {bad}")));
    }
    let words = g.constant(feats.words.clone());
    let pos = g.gather_rows(pos_table, &feats.pos_ids)?;
    let pct_ids: Vec<usize> = feats.pct_indicator.iter().map(|&b| usize::from(b != 0)).collect();
    let pct = g.gather_rows(pct_table, &pct_ids)?;
    let mask = Tensor::new(t, 1, feats.mask.iter().map(|&b| f64::from(b)).collect())?;
    let mask = g.constant(mask);
    g.concat(&[words, pos, pct, mask], Axis::Cols)
}

/// Classic LSTM weights; gate blocks are laid out `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        LstmParams {
            w_input: Tensor::uniform(input_dim, 4 * hidden, scale, rng),
            w_hidden: Tensor::uniform(hidden, 4 * hidden, scale, rng),
            bias: Tensor::zeros(1, 4 * hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w_input: Tensor::zeros(input_dim, 4 * hidden),
            w_hidden: Tensor::zeros(hidden, 4 * hidden),
            bias: Tensor::zeros(1, 4 * hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLstm {
        BoundLstm {
            w_input: g.param(self.w_input.clone()),
            w_hidden: g.param(self.w_hidden.clone()),
            bias: g.param(self.bias.clone()),
            hidden: self.hidden_dim(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl BoundLstm {
    pub fn accumulate(&self, g: &Graph, into: &mut LstmParams) {
        into.w_input.add_assign(&g.grad(self.w_input));
        into.w_hidden.add_assign(&g.grad(self.w_hidden));
        into.bias.add_assign(&g.grad(self.bias));
    }
}

/// Skip-gate projection `Δũ = σ(h · weight + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipGateParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SkipGateParams {
    pub const INITIAL_BIAS: f64 = 1.0;

    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        SkipGateParams {
            weight: Tensor::uniform(hidden, 1, scale, rng),
            bias: Tensor::scalar(Self::INITIAL_BIAS),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        SkipGateParams {
            weight: Tensor::zeros(hidden, 1),
            bias: Tensor::scalar(0.0),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundGate {
        BoundGate {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGate {
    pub weight: Var,
    pub bias: Var,
}

impl BoundGate {
    pub fn accumulate(&self, g: &Graph, into: &mut SkipGateParams) {
        into.weight.add_assign(&g.grad(self.weight));
        into.bias.add_assign(&g.grad(self.bias));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmState {
            h: g.constant(Tensor::zeros(1, hidden)),
            c: g.constant(Tensor::zeros(1, hidden)),
        }
    }
}

/// One LSTM transition from a raw input row `x_t` (1×input_dim).
pub fn lstm_step(g: &mut Graph, state: LstmState, x_t: Var, p: &BoundLstm) -> Result<LstmState> {
    let xw = g.matmul(x_t, p.w_input)?;
    let xw = g.add(xw, p.bias)?;
    lstm_step_projected(g, state, xw, p)
}

/// LSTM transition from a pre-projected input row `x_t · W + b` (1×4H).
pub fn lstm_step_projected(g: &mut Graph, state: LstmState, xw_t: Var, p: &BoundLstm) -> Result<LstmState> {
    let h = p.hidden;
    let hu = g.matmul(state.h, p.w_hidden)?;
    let pre = g.add(xw_t, hu)?;
    let i = g.slice_cols(pre, 0, h)?;
    let f = g.slice_cols(pre, h, 2 * h)?;
    let cand = g.slice_cols(pre, 2 * h, 3 * h)?;
    let o = g.slice_cols(pre, 3 * h, 4 * h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// How the binary update gate is produced at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateDecision {
    /// `round(ũ)`, ties up.
    Round,
    /// Forward value fixed to the given bit, gradient still straight-through.
    Fixed(f64),
    /// Constant bit with no gradient path into the gate.
    Disabled(f64),
    /// `u = ũ + offset` as an ordinary differentiable op. With the offset
    /// frozen at `bit - ũ₀` this is the straight-through surrogate written as
    /// a smooth function, which finite differences can check.
    Offset(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct SkipStep {
    pub state: LstmState,
    pub u: Var,
    pub u_tilde_next: Var,
}

/// One step of the skip-gated LSTM.
pub fn skip_lstm_step(
    g: &mut Graph,
    state: LstmState,
    u_tilde: Var,
    x_t: Var,
    p: &BoundLstm,
    gate: &BoundGate,
    decision: GateDecision,
) -> Result<SkipStep> {
    let xw = g.matmul(x_t, p.w_input)?;
    let xw = g.add(xw, p.bias)?;
    skip_lstm_step_projected(g, state, u_tilde, xw, p, gate, decision)
}

fn skip_lstm_step_projected(
    g: &mut Graph,
    state: LstmState,
    u_tilde: Var,
    xw_t: Var,
    p: &BoundLstm,
    gate: &BoundGate,
    decision: GateDecision,
) -> Result<SkipStep> {
    let ut = g.value(u_tilde).item();
    if !(0.0..=1.0).contains(&ut) && !matches!(decision, GateDecision::Offset(_)) {
        return Err(Error::BinarizeDomain(ut));
    }
    let u = match decision {
        GateDecision::Round => g.binarize(u_tilde)?,
        GateDecision::Fixed(bit) => g.straight_through(u_tilde, bit),
        GateDecision::Disabled(bit) => g.scalar(bit),
        GateDecision::Offset(off) => g.add_const(u_tilde, off),
    };
    let not_u = g.one_minus(u);
    let proposed = lstm_step_projected(g, state, xw_t, p)?;
    let blend = |g: &mut Graph, new: Var, old: Var| -> Result<Var> {
        let a = g.mul(u, new)?;
        let b = g.mul(not_u, old)?;
        g.add(a, b)
    };
    let h = blend(g, proposed.h, state.h)?;
    let c = blend(g, proposed.c, state.c)?;

    let logit = g.matmul(h, gate.weight)?;
    let logit = g.add(logit, gate.bias)?;
    let delta = g.sigmoid(logit);
    let acc = g.add(u_tilde, delta)?;
    let acc = g.min_with_const(acc, 1.0);
    let next_update = g.mul(u, delta)?;
    let next_copy = g.mul(not_u, acc)?;
    let u_tilde_next = g.add(next_update, next_copy)?;
    Ok(SkipStep {
        state: LstmState { h, c },
        u,
        u_tilde_next,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Plain,
    Skip,
}

impl std::str::FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(EncoderMode::Plain),
            "skip" => Ok(EncoderMode::Skip),
            other => Err(Error::InvalidConfig {
                key: "mode".into(),
                message: format!("expected `plain` or `skip`, got `{other}`"),
            }),
        }
    }
}

impl std::fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderMode::Plain => "plain",
            EncoderMode::Skip => "skip",
        })
    }
}

/// Gate policy for a whole sequence. Vectors are indexed by token position.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum GateControl {
    #[default]
    Learned,
    /// Every gate forced to update and detached from the gate parameters, so
    /// the encoder behaves as a plain biLSTM in both passes.
    ForceUpdate,
    /// Gate bits pinned per direction.
    Pinned { forward: Vec<f64>, backward: Vec<f64> },
    /// See [`GateDecision::Offset`].
    Offset { forward: Vec<f64>, backward: Vec<f64> },
}

impl GateControl {
    fn decision(&self, backward: bool, pos: usize) -> GateDecision {
        match self {
            GateControl::Learned => GateDecision::Round,
            GateControl::ForceUpdate => GateDecision::Disabled(1.0),
            GateControl::Pinned { forward, backward: bwd } => {
                GateDecision::Fixed(if backward { bwd[pos] } else { forward[pos] })
            }
            GateControl::Offset { forward, backward: bwd } => {
                GateDecision::Offset(if backward { bwd[pos] } else { forward[pos] })
            }
        }
    }

    fn check_len(&self, t: usize) -> Result<()> {
        match self {
            GateControl::Pinned { forward, backward } | GateControl::Offset { forward, backward } => {
                for v in [forward, backward] {
                    if v.len() != t {
                        return Err(Error::LengthMismatch {
                            what: "gate control",
                            left: v.len(),
                            right: t,
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-direction gate bits and pre-binarization values, indexed by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub u_fwd: Vec<u8>,
    pub u_bwd: Vec<u8>,
    pub u_tilde_fwd: Vec<f64>,
    pub u_tilde_bwd: Vec<f64>,
}

impl GateTrace {
    pub fn len(&self) -> usize {
        self.u_fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_fwd.is_empty()
    }

    pub fn is_remained(&self, t: usize) -> bool {
        self.u_fwd[t] == 1 && self.u_bwd[t] == 1
    }

    /// Positions updated by both directions, ascending.
    pub fn remained(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.is_remained(t)).collect()
    }

    pub fn skipped_count(&self) -> usize {
        self.len() - self.remained().len()
    }
}

/// Gate nodes `u_{t,d}` by position, for the skip loss.
#[derive(Clone, Debug)]
pub struct GateNodes {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[h_fwd ; h_bwd]` per position, T × 2H.
    pub output: Var,
    pub gates: Option<(GateTrace, GateNodes)>,
}

struct DirectionRun {
    hidden_rows: Vec<Var>,
    u: Vec<Var>,
    bits: Vec<u8>,
    u_tilde: Vec<f64>,
}

fn run_direction(
    g: &mut Graph,
    projected: Var,
    order: &[usize],
    lstm: &BoundLstm,
    gate: Option<(&BoundGate, &GateControl, bool)>,
) -> Result<DirectionRun> {
    let t = order.len();
    let mut state = LstmState::zeros(g, lstm.hidden);
    let mut hidden_rows = vec![state.h; t];
    let mut u = Vec::new();
    let mut bits = vec![1u8; t];
    let mut u_tilde_vals = vec![1.0; t];
    let mut u_tilde = g.scalar(1.0);
    for &pos in order {
        let xw = g.gather_rows(projected, &[pos])?;
        match gate {
            None => {
                state = lstm_step_projected(g, state, xw, lstm)?;
            }
            Some((gp, control, is_backward)) => {
                u_tilde_vals[pos] = g.value(u_tilde).item();
                let step =
                    skip_lstm_step_projected(g, state, u_tilde, xw, lstm, gp, control.decision(is_backward, pos))?;
                let bit = g.value(step.u).item();
                bits[pos] = u8::from(bit >= 0.5);
                state = step.state;
                u_tilde = step.u_tilde_next;
                u.push((pos, step.u));
            }
        }
        hidden_rows[pos] = state.h;
    }
    let mut u_by_pos = vec![None; t];
    for (pos, var) in u {
        u_by_pos[pos] = Some(var);
    }
    Ok(DirectionRun {
        hidden_rows,
        u: u_by_pos.into_iter().flatten().collect(),
        bits,
        u_tilde: u_tilde_vals,
    })
}

/// Bidirectional encoder. In skip mode `gates` carries each direction's gate
/// parameters and the gate policy; in plain mode it is `None`.
pub fn bi_encode(
    g: &mut Graph,
    features: Var,
    forward: &BoundLstm,
    backward: &BoundLstm,
    gates: Option<(&BoundGate, &BoundGate, &GateControl)>,
) -> Result<Encoded> {
    let t = g.shape(features).0;
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if let Some((_, _, control)) = gates {
        control.check_len(t)?;
    }
    let proj_f = g.matmul(features, forward.w_input)?;
    let proj_f = g.add(proj_f, forward.bias)?;
    let proj_b = g.matmul(features, backward.w_input)?;
    let proj_b = g.add(proj_b, backward.bias)?;

    let ltr: Vec<usize> = (0..t).collect();
    let rtl: Vec<usize> = (0..t).rev().collect();
    let f = run_direction(g, proj_f, &ltr, forward, gates.map(|(gf, _, c)| (gf, c, false)))?;
    let b = run_direction(g, proj_b, &rtl, backward, gates.map(|(_, gb, c)| (gb, c, true)))?;

    let hf = g.concat(&f.hidden_rows, Axis::Rows)?;
    let hb = g.concat(&b.hidden_rows, Axis::Rows)?;
    let output = g.concat(&[hf, hb], Axis::Cols)?;
    let gates = gates.map(|_| {
        (
            GateTrace {
                u_fwd: f.bits,
                u_bwd: b.bits,
                u_tilde_fwd: f.u_tilde,
                u_tilde_bwd: b.u_tilde,
            },
            GateNodes {
                forward: f.u,
                backward: b.u,
            },
        )
    });
    Ok(Encoded { output, gates })
}
