//! The full tagger: feature lookup, bidirectional (skip-)LSTM encoder, CRF
//! over the remained tokens, and the decode pipeline back to spans.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::codec::{decode_lenient, gap_fill, Span, Tag, TagSet};
use crate::corpus::{Embeddings, Instance};
use crate::crf::{project_emissions, viterbi, BoundCrf, CompressedSequence, CrfParams};
use crate::error::{Error, Result};
use crate::layers::{
    bi_encode, embed, BoundGate, BoundLstm, EncoderMode, FeatureConfig, GateControl, GateTrace, LstmParams,
    SkipGateParams, TokenFeatures,
};
use crate::objective::{joint_loss, skip_loss};
use crate::tensor::Tensor;

/// String-to-id table with `<unk>` at id 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK: &'static str = "<unk>";

    pub fn build<'a>(items: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<&str> = items.into_iter().filter(|s| *s != Self::UNK).collect();
        sorted.sort_unstable();
        sorted.dedup();
        let mut all = vec![Self::UNK.to_string()];
        all.extend(sorted.into_iter().map(str::to_string));
        Self::from(all)
    }

    pub fn id(&self, item: &str) -> usize {
        self.index.get(item).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub mode: EncoderMode,
    pub lambda: f64,
    pub seed: u64,
    /// Restrict Viterbi to BIOUL-valid paths.
    #[serde(default)]
    pub constrained_decoding: bool,
}

impl ModelConfig {
    pub fn new(word_dim: usize, mode: EncoderMode, lambda: f64, seed: u64) -> Self {
        ModelConfig {
            features: FeatureConfig::new(word_dim),
            mode,
            lambda,
            seed,
            constrained_decoding: false,
        }
    }
}

/// Every learned weight. The word embeddings are frozen and live in
/// [`Tagger`] instead.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub pos_table: Tensor,
    pub pct_table: Tensor,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub gate_fwd: SkipGateParams,
    pub gate_bwd: SkipGateParams,
    pub crf: CrfParams,
}

impl ModelParams {
    pub fn init(features: &FeatureConfig, pos_vocab: usize, num_tags: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = features.input_dim();
        let h = features.hidden_dim;
        ModelParams {
            pos_table: Tensor::uniform(pos_vocab, features.pos_dim, 0.1, &mut rng),
            pct_table: Tensor::uniform(2, features.pct_dim, 0.1, &mut rng),
            fwd: LstmParams::init(input, h, &mut rng),
            bwd: LstmParams::init(input, h, &mut rng),
            gate_fwd: SkipGateParams::init(h, &mut rng),
            gate_bwd: SkipGateParams::init(h, &mut rng),
            crf: CrfParams::init(2 * h, num_tags, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Names and tensors in a fixed order shared by the optimizer and the
    /// checkpoint format.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("pos_table", &self.pos_table),
            ("pct_table", &self.pct_table),
            ("fwd.w_input", &self.fwd.w_input),
            ("fwd.w_hidden", &self.fwd.w_hidden),
            ("fwd.bias", &self.fwd.bias),
            ("bwd.w_input", &self.bwd.w_input),
            ("bwd.w_hidden", &self.bwd.w_hidden),
            ("bwd.bias", &self.bwd.bias),
            ("gate_fwd.weight", &self.gate_fwd.weight),
            ("gate_fwd.bias", &self.gate_fwd.bias),
            ("gate_bwd.weight", &self.gate_bwd.weight),
            ("gate_bwd.bias", &self.gate_bwd.bias),
            ("crf.emission_w", &self.crf.emission_w),
            ("crf.emission_b", &self.crf.emission_b),
            ("crf.transitions", &self.crf.transitions),
            ("crf.start", &self.crf.start),
            ("crf.stop", &self.crf.stop),
        ]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.pos_table,
            &mut self.pct_table,
            &mut self.fwd.w_input,
            &mut self.fwd.w_hidden,
            &mut self.fwd.bias,
            &mut self.bwd.w_input,
            &mut self.bwd.w_hidden,
            &mut self.bwd.bias,
            &mut self.gate_fwd.weight,
            &mut self.gate_fwd.bias,
            &mut self.gate_bwd.weight,
            &mut self.gate_bwd.bias,
            &mut self.crf.emission_w,
            &mut self.crf.emission_b,
            &mut self.crf.transitions,
            &mut self.crf.start,
            &mut self.crf.stop,
        ]
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundModel {
    pub pos_table: crate::autodiff::Var,
    pub pct_table: crate::autodiff::Var,
    pub fwd: BoundLstm,
    pub bwd: BoundLstm,
    pub gate_fwd: BoundGate,
    pub gate_bwd: BoundGate,
    pub crf: BoundCrf,
}

impl BoundModel {
    pub fn bind(g: &mut Graph, p: &ModelParams) -> Self {
        BoundModel {
            pos_table: g.param(p.pos_table.clone()),
            pct_table: g.param(p.pct_table.clone()),
            fwd: p.fwd.bind(g),
            bwd: p.bwd.bind(g),
            gate_fwd: p.gate_fwd.bind(g),
            gate_bwd: p.gate_bwd.bind(g),
            crf: p.crf.bind(g),
        }
    }

    pub fn accumulate(&self, g: &Graph, into: &mut ModelParams) {
        into.pos_table.add_assign(&g.grad(self.pos_table));
        into.pct_table.add_assign(&g.grad(self.pct_table));
        self.fwd.accumulate(g, &mut into.fwd);
        self.bwd.accumulate(g, &mut into.bwd);
        self.gate_fwd.accumulate(g, &mut into.gate_fwd);
        self.gate_bwd.accumulate(g, &mut into.gate_bwd);
        self.crf.accumulate(g, &mut into.crf);
    }
}

/// Loss terms of one instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub crf: f64,
    pub skip: f64,
    pub remained: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tags: Vec<Tag>,
    pub spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<GateTrace>,
}

struct Forward {
    bound: BoundModel,
    remained: Vec<usize>,
    emissions: Option<crate::autodiff::Var>,
    trace: Option<GateTrace>,
    loss: Option<(crate::autodiff::Var, LossBreakdown)>,
}

#[derive(Clone, Debug)]
pub struct Tagger {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub embeddings: Embeddings,
    pub pos_vocab: Vocab,
    pub tagset: TagSet,
}

impl Tagger {
    pub fn new(config: ModelConfig, embeddings: Embeddings, pos_vocab: Vocab, tagset: TagSet) -> Result<Self> {
        config.features.validate()?;
        if config.features.word_dim != embeddings.dim() {
            return Err(Error::InvalidConfig {
                key: "word_dim".into(),
                message: format!(
                    "{} does not match embedding dimension {}",
                    config.features.word_dim,
                    embeddings.dim()
                ),
            });
        }
        if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
            return Err(Error::InvalidConfig {
                key: "lambda".into(),
                message: format!("{} must be finite and >= 0", config.lambda),
            });
        }
        let params = ModelParams::init(&config.features, pos_vocab.len(), tagset.len(), config.seed);
        Ok(Tagger {
            config,
            params,
            embeddings,
            pos_vocab,
            tagset,
        })
    }

    pub fn features(&self, inst: &Instance) -> TokenFeatures {
        TokenFeatures {
            words: self.embeddings.matrix(&inst.tokens),
            pos_ids: inst.pos.iter().map(|p| self.pos_vocab.id(p)).collect(),
            pct_indicator: inst.pct_indicator.clone(),
            mask: inst.mask.clone(),
        }
    }

    fn forward(&self, g: &mut Graph, inst: &Instance, control: &GateControl, with_loss: bool) -> Result<Forward> {
        let bound = BoundModel::bind(g, &self.params);
        let feats = self.features(inst);
        let x = embed(g, &feats, bound.pos_table, bound.pct_table)?;
        let gates = match self.config.mode {
            EncoderMode::Plain => None,
            EncoderMode::Skip => Some((&bound.gate_fwd, &bound.gate_bwd, control)),
        };
        let enc = bi_encode(g, x, &bound.fwd, &bound.bwd, gates)?;
        let t = inst.len();
        let remained = match &enc.gates {
            Some((trace, _)) => trace.remained(),
            None => (0..t).collect(),
        };
        let emissions = if remained.is_empty() {
            None
        } else {
            let rows = g.gather_rows(enc.output, &remained)?;
            Some(project_emissions(g, rows, &bound.crf)?)
        };
        let loss = if with_loss {
            let gold_ids = self.tagset.ids(&inst.gold)?;
            if gold_ids.len() != t {
                return Err(Error::LengthMismatch {
                    what: "gold tags",
                    left: gold_ids.len(),
                    right: t,
                });
            }
            let seq = emissions.map(|e| CompressedSequence {
                emissions: e,
                gold: Some(remained.iter().map(|&p| gold_ids[p]).collect()),
                origin_positions: remained.clone(),
            });
            let skip = match &enc.gates {
                Some((_, nodes)) => Some(skip_loss(g, nodes, &inst.gold)?),
                None => None,
            };
            let jl = joint_loss(g, seq.as_ref(), &bound.crf, skip, self.config.lambda)?;
            let total = g.value(jl.total).item();
            Some((
                jl.total,
                LossBreakdown {
                    total,
                    crf: jl.crf,
                    skip: jl.skip,
                    remained: remained.len(),
                    tokens: t,
                },
            ))
        } else {
            None
        };
        Ok(Forward {
            bound,
            remained,
            emissions,
            trace: enc.gates.map(|(trace, _)| trace),
            loss,
        })
    }

    /// Joint loss of one instance without gradients.
    pub fn loss(&self, inst: &Instance, control: &GateControl) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, inst, control, true)?;
        Ok(f.loss.expect("loss requested").1)
    }

    /// Joint loss of one instance and its gradient for every parameter.
    pub fn loss_and_grads(&self, inst: &Instance, control: &GateControl) -> Result<(LossBreakdown, ModelParams)> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, inst, control, true)?;
        let (root, breakdown) = f.loss.expect("loss requested");
        g.backward(root)?;
        let mut grads = self.params.zeros_like();
        f.bound.accumulate(&g, &mut grads);
        Ok((breakdown, grads))
    }

    /// Gate trace of one instance under learned gates; `None` in plain mode.
    pub fn trace(&self, inst: &Instance) -> Result<Option<GateTrace>> {
        let mut g = Graph::new();
        Ok(self.forward(&mut g, inst, &GateControl::Learned, false)?.trace)
    }

    /// Viterbi over the remained tokens, gap filling, lenient span decoding.
    pub fn predict(&self, inst: &Instance) -> Result<Prediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, inst, &GateControl::Learned, false)?;
        let t = inst.len();
        let tags = match f.emissions {
            None => vec![Tag::O; t],
            Some(e) => {
                let constraint = self.config.constrained_decoding.then_some(&self.tagset);
                let (path, _) = viterbi(g.value(e), &self.params.crf, constraint)?;
                gap_fill(&self.tagset.to_tags(&path), &f.remained, t)?
            }
        };
        let spans = decode_lenient(&tags);
        Ok(Prediction {
            tags,
            spans,
            trace: f.trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{expand_instances, generate_synthetic, SynthParams};

    fn tiny_tagger(mode: EncoderMode) -> (Tagger, Vec<Instance>) {
        let (recs, _) = generate_synthetic(&SynthParams {
            n: 3,
            ..SynthParams::default()
        })
        .unwrap();
        let inst: Vec<Instance> = recs.iter().flat_map(|r| expand_instances(r).unwrap()).collect();
        let words = inst.iter().flat_map(|i| i.tokens.iter().map(String::as_str));
        let emb = Embeddings::random(words, 8, 1);
        let pos = Vocab::build(inst.iter().flat_map(|i| i.pos.iter().map(String::as_str)));
        let mut cfg = ModelConfig::new(8, mode, 0.5, 3);
        cfg.features.hidden_dim = 6;
        cfg.features.pos_dim = 4;
        (Tagger::new(cfg, emb, pos, TagSet::part_whole()).unwrap(), inst)
    }

    #[test]
    fn vocab_reserves_unknown() {
        let v = Vocab::build(["NN", "DT", "NN"]);
        assert_eq!(v.items(), &["<unk>", "DT", "NN"]);
        assert_eq!(v.id("VB"), 0);
        assert_eq!(v.id("NN"), 2);
    }

    #[test]
    fn forced_gates_match_plain_loss() {
        let (skip, inst) = tiny_tagger(EncoderMode::Skip);
        let mut plain = skip.clone();
        plain.config.mode = EncoderMode::Plain;
        for i in &inst {
            let a = skip.loss(i, &GateControl::ForceUpdate).unwrap();
            let b = plain.loss(i, &GateControl::Learned).unwrap();
            assert!((a.total - b.total).abs() <= 1e-12, "{} vs {}", a.total, b.total);
            assert_eq!(a.skip, 0.0);
        }
    }

    #[test]
    fn prediction_spans_are_disjoint() {
        let (tagger, inst) = tiny_tagger(EncoderMode::Skip);
        for i in &inst {
            let p = tagger.predict(i).unwrap();
            assert_eq!(p.tags.len(), i.len());
            assert!(p.trace.is_some());
            for w in p.spans.windows(2) {
                assert!(w[0].end <= w[1].start);
            }
        }
    }

    #[test]
    fn all_skipped_sequence_has_zero_crf_term() {
        let (tagger, inst) = tiny_tagger(EncoderMode::Skip);
        let i = &inst[0];
        let t = i.len();
        let mut fwd = vec![0.0; t];
        let mut bwd = vec![0.0; t];
        fwd[0] = 1.0;
        bwd[t - 1] = 1.0;
        let l = tagger
            .loss(
                i,
                &GateControl::Pinned {
                    forward: fwd,
                    backward: bwd,
                },
            )
            .unwrap();
        assert_eq!(l.remained, 0);
        assert_eq!(l.crf, 0.0);
        let entity = i.gold.iter().filter(|g| g.is_entity()).count();
        assert_eq!(l.skip, (2 * entity) as f64);
    }

    #[test]
    fn grads_have_param_shapes() {
        let (tagger, inst) = tiny_tagger(EncoderMode::Skip);
        let (l, g) = tagger.loss_and_grads(&inst[0], &GateControl::Learned).unwrap();
        assert!(l.total.is_finite() && l.total >= 0.0);
        for (a, b) in tagger.params.tensors().iter().zip(g.tensors()) {
            assert_eq!(a.shape(), b.shape());
        }
        assert!(g.global_norm() > 0.0);
    }
}
