//! Skip loss and the joint objective.
//!
//! `L = L_crf(remained tokens) + λ · Σ_t Σ_d (1 − u_{t,d}) · [y_t ≠ O]`

use crate::autodiff::{Axis, Graph, Var};
use crate::codec::Tag;
use crate::crf::{nll, BoundCrf, CompressedSequence};
use crate::error::{Error, Result};
use crate::layers::{GateNodes, GateTrace};

/// Count of (direction, entity-token) pairs whose gate skipped, as a graph
/// node. Each `1 − u` term carries the straight-through gradient back to `ũ`.
pub fn skip_loss(g: &mut Graph, gates: &GateNodes, gold: &[Tag]) -> Result<Var> {
    for nodes in [&gates.forward, &gates.backward] {
        if nodes.len() != gold.len() {
            return Err(Error::LengthMismatch {
                what: "skip loss",
                left: nodes.len(),
                right: gold.len(),
            });
        }
    }
    let mut terms = Vec::new();
    for (t, tag) in gold.iter().enumerate() {
        if tag.is_entity() {
            terms.push(g.one_minus(gates.forward[t]));
            terms.push(g.one_minus(gates.backward[t]));
        }
    }
    if terms.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let stacked = g.concat(&terms, Axis::Cols)?;
    Ok(g.sum(stacked))
}

/// The same count computed from a trace.
pub fn skip_loss_value(trace: &GateTrace, gold: &[Tag]) -> Result<f64> {
    if trace.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "skip loss",
            left: trace.len(),
            right: gold.len(),
        });
    }
    let mut n = 0u32;
    for (t, tag) in gold.iter().enumerate() {
        if tag.is_entity() {
            n += u32::from(trace.u_fwd[t] == 0) + u32::from(trace.u_bwd[t] == 0);
        }
    }
    Ok(f64::from(n))
}

/// Loss node plus the values of its two terms.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub crf: f64,
    pub skip: f64,
}

/// `nll + λ · skip`. With `skip = None` (plain mode) this is the CRF term.
/// When every token was skipped the CRF term is zero.
pub fn joint_loss(
    g: &mut Graph,
    compressed: Option<&CompressedSequence>,
    crf: &BoundCrf,
    skip: Option<Var>,
    lambda: f64,
) -> Result<JointLoss> {
    let crf_term = match compressed {
        Some(seq) => nll(g, seq, crf)?,
        None => g.scalar(0.0),
    };
    let crf_value = g.value(crf_term).item();
    let Some(skip_term) = skip else {
        return Ok(JointLoss {
            total: crf_term,
            crf: crf_value,
            skip: 0.0,
        });
    };
    let skip_value = g.value(skip_term).item();
    let weighted = g.scale(skip_term, lambda);
    let total = g.add(crf_term, weighted)?;
    Ok(JointLoss {
        total,
        crf: crf_value,
        skip: skip_value,
    })
}
