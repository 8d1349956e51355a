use proptest::prelude::*;

use skiptag::codec::{decode_lenient, decode_strict, encode, Span, TagSet};
use skiptag::corpus::{expand_corpus, generate_synthetic, keep_all, Embeddings, Instance, SynthParams};
use skiptag::layers::{EncoderMode, GateControl};
use skiptag::model::{Tagger, Vocab};
use skiptag::trainer::{train_with_control, EpochRecord, TrainingConfig};

fn spans_strategy() -> impl Strategy<Value = (usize, Vec<Span>)> {
    (
        1usize..30,
        prop::collection::vec((0usize..3, 1usize..5, any::<bool>()), 0..8),
    )
        .prop_map(|(extra, raw)| {
            let mut spans = Vec::new();
            let mut at = 0;
            for (gap, len, part) in raw {
                at += gap;
                spans.push(Span::new(if part { "part" } else { "whole" }, at, at + len));
                at += len;
            }
            (at + extra, spans)
        })
}

proptest! {
    #[test]
    fn encode_decode_round_trip((len, spans) in spans_strategy()) {
        let tags = encode(&spans, len).unwrap();
        prop_assert_eq!(tags.len(), len);
        prop_assert_eq!(&decode_strict(&tags).unwrap(), &spans);
        prop_assert_eq!(decode_lenient(&tags), spans);
    }
}

fn corpus() -> Vec<Instance> {
    let (recs, _) = generate_synthetic(&SynthParams {
        n: 4,
        t_range: (20, 30),
        gap_range: (15, 18),
        seed: 11,
    })
    .unwrap();
    expand_corpus(&recs, keep_all).unwrap()
}

fn tagger(cfg: &TrainingConfig, data: &[Instance]) -> Tagger {
    let emb = Embeddings::random(data.iter().flat_map(|i| i.tokens.iter().map(String::as_str)), 8, 3);
    let pos = Vocab::build(data.iter().flat_map(|i| i.pos.iter().map(String::as_str)));
    Tagger::new(cfg.model_config(8), emb, pos, TagSet::part_whole()).unwrap()
}

fn losses(cfg: &TrainingConfig, control: &GateControl, data: &[Instance]) -> (Vec<f64>, Tagger) {
    let mut out = Vec::new();
    let res = train_with_control(cfg, tagger(cfg, data), data, data, control, |r: &EpochRecord| {
        out.push(r.train_loss)
    })
    .unwrap();
    (out, res.tagger)
}

fn small_cfg(mode: EncoderMode, lambda: f64) -> TrainingConfig {
    TrainingConfig {
        mode,
        lambda,
        max_epochs: 3,
        hidden_dim: 6,
        pos_dim: 3,
        pct_dim: 2,
        batch_size: 4,
        seed: 9,
        ..TrainingConfig::default()
    }
}

#[test]
fn forced_gates_with_zero_lambda_follow_the_plain_trajectory() {
    let data = corpus();
    let (skip, _) = losses(&small_cfg(EncoderMode::Skip, 0.0), &GateControl::ForceUpdate, &data);
    let (plain, _) = losses(&small_cfg(EncoderMode::Plain, 0.0), &GateControl::Learned, &data);
    assert_eq!(skip.len(), plain.len());
    for (a, b) in skip.iter().zip(&plain) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn training_is_deterministic_and_keeps_embeddings_frozen() {
    let data = corpus();
    let cfg = small_cfg(EncoderMode::Skip, 0.3);
    let before = tagger(&cfg, &data).embeddings;
    let (l1, t1) = losses(&cfg, &GateControl::Learned, &data);
    let (l2, t2) = losses(&cfg, &GateControl::Learned, &data);
    assert_eq!(l1, l2);
    assert_eq!(t1.params, t2.params);
    assert_eq!(t1.embeddings, before);
}

#[test]
fn thread_count_does_not_change_the_result() {
    let data = corpus();
    let cfg = small_cfg(EncoderMode::Skip, 0.5);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| losses(&cfg, &GateControl::Learned, &data))
    };
    let (l1, t1) = run(1);
    let (l4, t4) = run(4);
    assert_eq!(l1, l4);
    assert_eq!(t1.params, t4.params);
}
