//! Seeded synthetic part/whole corpus with a long gap between the
//! percentages and their shared `part`.
//!
//! Sentence shape:
//!
//! ```text
//! <lead> P₁ of W₁ , P₂ of W₂ , and P₃ of W₃ , <filler × f> <cue> <part> .
//! ```
//!
//! Every percentage shares the same part; each has its own whole. The
//! filler is drawn from [`FILLER_WORDS`] and sized so the last percentage
//! sits `gap` tokens before the start of the part.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{recognize_percentages, Fact, SentenceRecord};
use crate::error::{Error, Result};

/// Function words and punctuation used as filler.
pub const FILLER_WORDS: &[(&str, &str)] = &[
    (",", ","),
    ("the", "DT"),
    ("of", "IN"),
    ("to", "TO"),
    ("and", "CC"),
    ("in", "IN"),
    ("by", "IN"),
    ("a", "DT"),
    ("-", ":"),
    ("as", "IN"),
    ("that", "IN"),
    ("were", "VBD"),
];

const LEADS: &[&[(&str, &str)]] = &[
    &[("the", "DT"), ("survey", "NN"), ("found", "VBD"), ("that", "IN")],
    &[("researchers", "NNS"), ("estimate", "VBP"), ("that", "IN")],
    &[
        ("according", "VBG"),
        ("to", "TO"),
        ("the", "DT"),
        ("report", "NN"),
        (",", ","),
    ],
    &[("officials", "NNS"), ("said", "VBD")],
    &[],
];

const MODIFIERS: &[&str] = &["young", "urban", "rural", "female", "male", "local", "older", "new"];
const NOUNS: &[&str] = &[
    "students",
    "workers",
    "voters",
    "adults",
    "households",
    "jobs",
    "patients",
    "firms",
    "teachers",
    "farmers",
    "graduates",
    "residents",
];
const PLACES: &[&str] = &[
    "china", "india", "ethiopia", "canada", "brazil", "kenya", "france", "peru",
];
const CUES: &[&str] = &["would", "could", "will", "can"];
const VERBS: &[&str] = &["own", "support", "prefer", "use", "oppose", "attend", "need", "want"];
const OBJECTS: &[&[(&str, &str)]] = &[
    &[("a", "DT"), ("car", "NN")],
    &[("the", "DT"), ("policy", "NN")],
    &[("online", "JJ"), ("classes", "NNS")],
    &[("public", "JJ"), ("transport", "NN")],
    &[("health", "NN"), ("insurance", "NN")],
    &[("the", "DT"), ("new", "JJ"), ("law", "NN")],
    &[("remote", "JJ"), ("work", "NN")],
    &[("solar", "JJ"), ("power", "NN")],
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    /// Inclusive sentence length bounds.
    pub t_range: (usize, usize),
    /// Inclusive bounds on the distance from each percentage token to the
    /// start of the part span.
    pub gap_range: (usize, usize),
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 100,
            t_range: (20, 60),
            gap_range: (15, 25),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub sentences: usize,
    pub percentages: usize,
    pub tokens: usize,
    pub mean_length: f64,
    pub min_gap: usize,
    pub max_gap: usize,
}

struct Builder {
    tokens: Vec<String>,
    pos: Vec<String>,
}

impl Builder {
    fn push(&mut self, tok: &str, pos: &str) {
        self.tokens.push(tok.to_string());
        self.pos.push(pos.to_string());
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

fn percentage_tokens(rng: &mut ChaCha8Rng, b: &mut Builder) {
    let value = if rng.gen_bool(0.2) {
        format!("{}.{}", rng.gen_range(1..60), rng.gen_range(1..10))
    } else {
        rng.gen_range(1..100).to_string()
    };
    match rng.gen_range(0..3) {
        0 => b.push(&format!("{value}%"), "CD"),
        1 => {
            b.push(&value, "CD");
            b.push("%", "NN");
        }
        _ => {
            b.push(&value, "CD");
            b.push("percent", "NN");
        }
    }
}

fn whole_tokens(rng: &mut ChaCha8Rng, b: &mut Builder) -> (usize, usize) {
    let start = b.len();
    if rng.gen_bool(0.5) {
        b.push(MODIFIERS.choose(rng).unwrap(), "JJ");
    }
    b.push(NOUNS.choose(rng).unwrap(), "NNS");
    if rng.gen_bool(0.5) {
        b.push("in", "IN");
        b.push(PLACES.choose(rng).unwrap(), "NNP");
    }
    (start, b.len())
}

fn one_sentence(rng: &mut ChaCha8Rng, id: usize, p: &SynthParams) -> Option<(SentenceRecord, usize)> {
    let k = rng.gen_range(1..=3usize);
    let mut b = Builder {
        tokens: Vec::new(),
        pos: Vec::new(),
    };
    for &(w, t) in *LEADS.choose(rng).unwrap() {
        b.push(w, t);
    }
    let mut pct_starts = Vec::new();
    let mut wholes = Vec::new();
    for i in 0..k {
        if i > 0 {
            b.push(",", ",");
            if i == k - 1 {
                b.push("and", "CC");
            }
        }
        pct_starts.push(b.len());
        percentage_tokens(rng, &mut b);
        b.push("of", "IN");
        wholes.push(whole_tokens(rng, &mut b));
    }
    b.push(",", ",");

    let gap = rng.gen_range(p.gap_range.0..=p.gap_range.1);
    let last_pct = *pct_starts.last().unwrap();
    // part starts after the filler and the cue word
    let filler = (last_pct + gap).checked_sub(b.len() + 1)?;
    for _ in 0..filler {
        let &(w, t) = FILLER_WORDS.choose(rng).unwrap();
        b.push(w, t);
    }
    b.push(CUES.choose(rng).unwrap(), "MD");
    let part_start = b.len();
    b.push(VERBS.choose(rng).unwrap(), "VB");
    for &(w, t) in *OBJECTS.choose(rng).unwrap() {
        b.push(w, t);
    }
    let part_end = b.len();
    b.push(".", ".");

    let t = b.len();
    if t < p.t_range.0 || t > p.t_range.1 {
        return None;
    }
    let percentages = recognize_percentages(&b.tokens);
    if percentages.len() != k {
        return None;
    }
    let mut facts = Vec::new();
    for (i, (ws, we)) in wholes.into_iter().enumerate() {
        facts.push(Fact {
            percentage: i,
            role: "whole".into(),
            start: ws,
            end: we,
        });
        facts.push(Fact {
            percentage: i,
            role: "part".into(),
            start: part_start,
            end: part_end,
        });
    }
    let rec = SentenceRecord {
        id: format!("synth{id}"),
        tokens: b.tokens,
        pos: b.pos,
        percentages,
        facts,
        entities: Vec::new(),
    };
    Some((rec, gap))
}

/// Deterministic under `seed`.
pub fn generate_synthetic(p: &SynthParams) -> Result<(Vec<SentenceRecord>, SynthStats)> {
    let (t_min, t_max) = p.t_range;
    let (g_min, g_max) = p.gap_range;
    if t_min > t_max || g_min > g_max || g_min == 0 || g_max >= t_max {
        return Err(Error::InfeasibleGeometry(format!(
            "gap range {:?} must lie within length range {:?}",
            p.gap_range, p.t_range
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut records = Vec::with_capacity(p.n);
    let mut min_gap = usize::MAX;
    let mut max_gap = 0;
    const ATTEMPTS: usize = 1000;
    for id in 0..p.n {
        let mut made = None;
        for _ in 0..ATTEMPTS {
            if let Some(x) = one_sentence(&mut rng, id, p) {
                made = Some(x);
                break;
            }
        }
        let (rec, gap) = made.ok_or_else(|| {
            Error::InfeasibleGeometry(format!(
                "no sentence with length in {:?} and gap in {:?} after {ATTEMPTS} attempts",
                p.t_range, p.gap_range
            ))
        })?;
        min_gap = min_gap.min(gap);
        max_gap = max_gap.max(gap);
        records.push(rec);
    }
    let tokens: usize = records.iter().map(|r| r.len()).sum();
    let stats = SynthStats {
        sentences: records.len(),
        percentages: records.iter().map(|r| r.percentages.len()).sum(),
        tokens,
        mean_length: if records.is_empty() {
            0.0
        } else {
            tokens as f64 / records.len() as f64
        },
        min_gap: if records.is_empty() { 0 } else { min_gap },
        max_gap,
    };
    Ok((records, stats))
}
