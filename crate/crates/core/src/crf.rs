//! Linear-chain CRF over the remained-token sequence.
//!
//! Path score: `start[y₀] + Σ_t emit[t, y_t] + Σ_t trans[y_{t-1}, y_t] + stop[y_last]`.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::codec::TagSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// Emission projection, `input_dim × K`.
    pub emission_w: Tensor,
    pub emission_b: Tensor,
    /// `transitions[i, j]` scores tag `i` followed by tag `j`.
    pub transitions: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

impl CrfParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, num_tags: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (input_dim as f64).sqrt();
        CrfParams {
            emission_w: Tensor::uniform(input_dim, num_tags, scale, rng),
            emission_b: Tensor::zeros(1, num_tags),
            transitions: Tensor::uniform(num_tags, num_tags, 0.1, rng),
            start: Tensor::zeros(1, num_tags),
            stop: Tensor::zeros(1, num_tags),
        }
    }

    pub fn zeros(input_dim: usize, num_tags: usize) -> Self {
        CrfParams {
            emission_w: Tensor::zeros(input_dim, num_tags),
            emission_b: Tensor::zeros(1, num_tags),
            transitions: Tensor::zeros(num_tags, num_tags),
            start: Tensor::zeros(1, num_tags),
            stop: Tensor::zeros(1, num_tags),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.transitions.rows()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundCrf {
        BoundCrf {
            emission_w: g.param(self.emission_w.clone()),
            emission_b: g.param(self.emission_b.clone()),
            transitions: g.param(self.transitions.clone()),
            start: g.param(self.start.clone()),
            stop: g.param(self.stop.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundCrf {
    pub emission_w: Var,
    pub emission_b: Var,
    pub transitions: Var,
    pub start: Var,
    pub stop: Var,
}

impl BoundCrf {
    pub fn accumulate(&self, g: &Graph, into: &mut CrfParams) {
        into.emission_w.add_assign(&g.grad(self.emission_w));
        into.emission_b.add_assign(&g.grad(self.emission_b));
        into.transitions.add_assign(&g.grad(self.transitions));
        into.start.add_assign(&g.grad(self.start));
        into.stop.add_assign(&g.grad(self.stop));
    }

    fn num_tags(&self, g: &Graph) -> usize {
        g.shape(self.transitions).0
    }
}

/// Emissions over the remained tokens plus the map back to sentence positions.
#[derive(Clone, Debug)]
pub struct CompressedSequence {
    pub emissions: Var,
    pub gold: Option<Vec<usize>>,
    pub origin_positions: Vec<usize>,
}

/// Affine map `H · W + b` per position.
pub fn project_emissions(g: &mut Graph, hidden: Var, crf: &BoundCrf) -> Result<Var> {
    if g.shape(hidden).0 == 0 {
        return Err(Error::EmptySequence);
    }
    let e = g.matmul(hidden, crf.emission_w)?;
    g.add(e, crf.emission_b)
}

fn check_emissions(g: &Graph, emissions: Var, crf: &BoundCrf) -> Result<(usize, usize)> {
    let (t, k) = g.shape(emissions);
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let kk = crf.num_tags(g);
    if k != kk {
        return Err(Error::ShapeMismatch {
            op: "crf emissions",
            left: (t, k),
            right: (kk, kk),
        });
    }
    Ok((t, k))
}

/// `log Z` by the forward algorithm in log space.
pub fn log_partition(g: &mut Graph, emissions: Var, crf: &BoundCrf) -> Result<Var> {
    let (t, _) = check_emissions(g, emissions, crf)?;
    let first = g.gather_rows(emissions, &[0])?;
    let mut alpha = g.add(crf.start, first)?;
    for step in 1..t {
        let col = g.transpose(alpha);
        let scores = g.add(col, crf.transitions)?;
        let reduced = g.log_sum_exp_rows(scores);
        let emit = g.gather_rows(emissions, &[step])?;
        alpha = g.add(reduced, emit)?;
    }
    let end = g.add(alpha, crf.stop)?;
    Ok(g.log_sum_exp(end))
}

/// Score of one tag path.
pub fn path_score(g: &mut Graph, emissions: Var, tags: &[usize], crf: &BoundCrf) -> Result<Var> {
    let (t, k) = check_emissions(g, emissions, crf)?;
    if tags.len() != t {
        return Err(Error::LengthMismatch {
            what: "crf gold tags",
            left: tags.len(),
            right: t,
        });
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= k) {
        return Err(Error::IndexOutOfRange {
            what: "tag id",
            index: bad,
            len: k,
        });
    }
    let emit_pos: Vec<(usize, usize)> = tags.iter().copied().enumerate().collect();
    let emit = g.pick(emissions, &emit_pos)?;
    let mut total = g.sum(emit);
    let start = g.pick(crf.start, &[(0, tags[0])])?;
    let stop = g.pick(crf.stop, &[(0, tags[t - 1])])?;
    total = g.add(total, start)?;
    total = g.add(total, stop)?;
    if t > 1 {
        let trans_pos: Vec<(usize, usize)> = tags.windows(2).map(|w| (w[0], w[1])).collect();
        let trans = g.pick(crf.transitions, &trans_pos)?;
        let trans = g.sum(trans);
        total = g.add(total, trans)?;
    }
    Ok(total)
}

/// Negative log-likelihood of the gold path: `log Z − score(gold)`.
pub fn nll(g: &mut Graph, seq: &CompressedSequence, crf: &BoundCrf) -> Result<Var> {
    let gold = seq.gold.as_ref().ok_or(Error::MissingGold)?;
    let log_z = log_partition(g, seq.emissions, crf)?;
    let score = path_score(g, seq.emissions, gold, crf)?;
    g.sub(log_z, score)
}

/// Highest-scoring path and its score. Ties go to the lower tag id. With
/// `constraint`, BIOUL-invalid bigrams and boundaries are excluded.
pub fn viterbi(emissions: &Tensor, params: &CrfParams, constraint: Option<&TagSet>) -> Result<(Vec<usize>, f64)> {
    let (t, k) = emissions.shape();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if k != params.num_tags() {
        return Err(Error::ShapeMismatch {
            op: "viterbi",
            left: (t, k),
            right: (params.num_tags(), params.num_tags()),
        });
    }
    let allowed =
        |prev: Option<usize>, next: Option<usize>| constraint.is_none_or(|ts| ts.transition_allowed(prev, next));
    let mut score: Vec<f64> = (0..k)
        .map(|j| {
            if allowed(None, Some(j)) {
                params.start.data()[j] + emissions.get(0, j)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back = vec![vec![0usize; k]; t];
    for step in 1..t {
        let mut next = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &s) in score.iter().enumerate() {
                if !allowed(Some(i), Some(j)) {
                    continue;
                }
                let v = s + params.transitions.get(i, j);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(step, j);
            back[step][j] = arg;
        }
        score = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &s) in score.iter().enumerate() {
        if !allowed(Some(j), None) {
            continue;
        }
        let v = s + params.stop.data()[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![last; t];
    for step in (1..t).rev() {
        path[step - 1] = back[step][path[step]];
    }
    Ok((path, best))
}
