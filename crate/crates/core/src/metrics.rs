//! Exact-match span F1 and skip statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::{Span, Tag};
use crate::error::{Error, Result};
use crate::layers::GateTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfRow {
    pub role: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl PrfRow {
    pub fn from_counts(role: impl Into<String>, gold: usize, predicted: usize, correct: usize) -> Self {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfRow {
            role: role.into(),
            gold,
            predicted,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub token: String,
    pub skips: usize,
    pub freq: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipStats {
    pub instances: usize,
    pub total_tokens: usize,
    pub tokens_skipped: usize,
    pub entity_tokens_skipped: usize,
    pub mean_skipped_per_instance: f64,
    pub mean_entity_skipped_per_instance: f64,
    pub skipped_fraction: f64,
    pub ranked: Vec<RankedToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: PrfRow,
    pub roles: Vec<PrfRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<SkipStats>,
}

/// Micro-averaged exact-match P/R/F1 on `(role, start, end)`, overall and per
/// role.
pub fn span_f1(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "span f1 instances",
            left: gold.len(),
            right: pred.len(),
        });
    }
    // role -> (gold, predicted, correct)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<&Span> = g.iter().collect();
        let ps: BTreeSet<&Span> = p.iter().collect();
        for s in &gs {
            counts.entry(&s.role).or_default().0 += 1;
        }
        for s in &ps {
            let c = counts.entry(&s.role).or_default();
            c.1 += 1;
            if gs.contains(s) {
                c.2 += 1;
            }
        }
    }
    let roles: Vec<PrfRow> = counts
        .iter()
        .map(|(r, &(g, p, c))| PrfRow::from_counts(*r, g, p, c))
        .collect();
    let (g, p, c) = counts
        .values()
        .fold((0, 0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    Ok(EvalReport {
        overall: PrfRow::from_counts("overall", g, p, c),
        roles,
        skip: None,
    })
}

/// Union-skipped token counts and the skipped-token ranking. Tokens are
/// lowercased for ranking.
pub fn skip_stats(traces: &[GateTrace], golds: &[Vec<Tag>], tokens: &[Vec<String>]) -> Result<SkipStats> {
    if traces.len() != golds.len() || traces.len() != tokens.len() {
        return Err(Error::LengthMismatch {
            what: "skip stats instances",
            left: traces.len(),
            right: golds.len().min(tokens.len()),
        });
    }
    let mut stats = SkipStats {
        instances: traces.len(),
        ..SkipStats::default()
    };
    let mut skips: HashMap<String, usize> = HashMap::new();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for ((trace, gold), toks) in traces.iter().zip(golds).zip(tokens) {
        if trace.len() != gold.len() || trace.len() != toks.len() {
            return Err(Error::LengthMismatch {
                what: "skip stats sequence",
                left: trace.len(),
                right: gold.len().min(toks.len()),
            });
        }
        stats.total_tokens += trace.len();
        for (t, tok) in toks.iter().enumerate() {
            let key = tok.to_lowercase();
            if !trace.is_remained(t) {
                stats.tokens_skipped += 1;
                if gold[t].is_entity() {
                    stats.entity_tokens_skipped += 1;
                }
                *skips.entry(key.clone()).or_default() += 1;
            }
            *freq.entry(key).or_default() += 1;
        }
    }
    if stats.instances > 0 {
        stats.mean_skipped_per_instance = stats.tokens_skipped as f64 / stats.instances as f64;
        stats.mean_entity_skipped_per_instance = stats.entity_tokens_skipped as f64 / stats.instances as f64;
    }
    stats.skipped_fraction = ratio(stats.tokens_skipped, stats.total_tokens);
    stats.ranked = rank_skipped_tokens(&skips, &freq);
    Ok(stats)
}

/// `skips(w) / ln(freq(w))`, descending, ties broken by token. Tokens seen
/// once are left out.
pub fn rank_skipped_tokens(skips: &HashMap<String, usize>, freq: &HashMap<String, usize>) -> Vec<RankedToken> {
    let mut out: Vec<RankedToken> = freq
        .iter()
        .filter(|(_, &f)| f > 1)
        .map(|(w, &f)| {
            let s = skips.get(w).copied().unwrap_or(0);
            RankedToken {
                token: w.clone(),
                skips: s,
                freq: f,
                score: s as f64 / (f as f64).ln(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
    out
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "role", "gold", "pred", "corr", "P", "R", "F1"
        );
        for row in std::iter::once(&self.overall).chain(&self.roles) {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2}",
                row.role,
                row.gold,
                row.predicted,
                row.correct,
                100.0 * row.precision,
                100.0 * row.recall,
                100.0 * row.f1
            );
        }
        if let Some(k) = &self.skip {
            let _ = writeln!(
                s,
                "skipped {} of {} tokens ({:.3}%), {} entity tokens; per instance {:.3} / {:.3}",
                k.tokens_skipped,
                k.total_tokens,
                100.0 * k.skipped_fraction,
                k.entity_tokens_skipped,
                k.mean_skipped_per_instance,
                k.mean_entity_skipped_per_instance
            );
            let top: Vec<String> = k
                .ranked
                .iter()
                .take(10)
                .filter(|r| r.skips > 0)
                .map(|r| format!("{} ({:.3})", r.token, r.score))
                .collect();
            if !top.is_empty() {
                let _ = writeln!(s, "most skipped: {}", top.join(", "));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(role: &str, a: usize, b: usize) -> Span {
        Span::new(role, a, b)
    }

    #[test]
    fn identity_is_perfect() {
        let g = vec![vec![sp("part", 0, 2), sp("whole", 3, 4)]];
        let r = span_f1(&g, &g).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_correct() {
        let g = vec![vec![sp("part", 0, 2), sp("whole", 3, 4)]];
        let p = vec![vec![sp("part", 0, 2), sp("whole", 3, 5)]];
        let r = span_f1(&g, &p).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.roles[0].role, "part");
        assert_eq!(r.roles[0].f1, 1.0);
        assert_eq!(r.roles[1].f1, 0.0);
    }

    #[test]
    fn empty_prediction() {
        let r = span_f1(&[vec![sp("part", 0, 1)]], &[vec![]]).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned() {
        assert!(span_f1(&[vec![]], &[]).is_err());
    }

    fn trace(fwd: &[u8], bwd: &[u8]) -> GateTrace {
        GateTrace {
            u_fwd: fwd.to_vec(),
            u_bwd: bwd.to_vec(),
            u_tilde_fwd: vec![1.0; fwd.len()],
            u_tilde_bwd: vec![1.0; fwd.len()],
        }
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn skip_counts() {
        let toks = vec![words("a b c")];
        let gold = vec![vec![Tag::B("part".into()), Tag::L("part".into()), Tag::O]];
        let none = skip_stats(&[trace(&[1, 1, 1], &[1, 1, 1])], &gold, &toks).unwrap();
        assert_eq!(
            (none.tokens_skipped, none.entity_tokens_skipped, none.total_tokens),
            (0, 0, 3)
        );
        let o = skip_stats(&[trace(&[1, 1, 1], &[1, 1, 0])], &gold, &toks).unwrap();
        assert_eq!((o.tokens_skipped, o.entity_tokens_skipped), (1, 0));
        let b = skip_stats(&[trace(&[0, 1, 1], &[1, 1, 1])], &gold, &toks).unwrap();
        assert_eq!((b.tokens_skipped, b.entity_tokens_skipped), (1, 1));
    }

    #[test]
    fn ranking_formula() {
        let skips: HashMap<String, usize> = [("the".to_string(), 10)].into_iter().collect();
        let freq: HashMap<String, usize> = [("the".to_string(), 100), ("cat".to_string(), 5), ("x".to_string(), 1)]
            .into_iter()
            .collect();
        let r = rank_skipped_tokens(&skips, &freq);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].token, "the");
        assert!((r[0].score - 2.1715).abs() < 1e-4);
        assert_eq!((r[1].token.as_str(), r[1].score), ("cat", 0.0));
    }
}
