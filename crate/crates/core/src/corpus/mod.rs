//! Data ingestion: percentage-task records, CoNLL sentences, embeddings,
//! percentage recognition and per-percentage instance expansion.
//!
//! Record files are UTF-8 JSON lines, one [`SentenceRecord`] per line:
//!
//! ```text
//! {"id":"s1","tokens":["30","percent","of","Americans",...],"pos":["CD","NN","IN","NNPS",...],
//!  "percentages":[{"token_index":0,"surface":"30 percent","normalized_value":30.0}],
//!  "facts":[{"percentage":0,"role":"whole","start":3,"end":4}, ...]}
//! ```
//!
//! NER sentences have no percentages and carry their spans in `entities`.

mod conll;
mod embeddings;
mod recognize;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use conll::{load_conll, parse_conll};
pub use embeddings::Embeddings;
pub use recognize::recognize_percentages;
pub use synth::{generate_synthetic, SynthParams, SynthStats, FILLER_WORDS};

use crate::codec::{encode, Span, Tag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentageMention {
    pub token_index: usize,
    pub surface: String,
    pub normalized_value: f64,
}

/// A `part` or `whole` span attached to one percentage of the sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub percentage: usize,
    pub role: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default)]
    pub percentages: Vec<PercentageMention>,
    #[serde(default)]
    pub facts: Vec<Fact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<Span>,
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tokens.len();
        if t == 0 {
            return Err(Error::Data(format!("record `{}` has no tokens", self.id)));
        }
        if self.pos.len() != t {
            return Err(Error::Data(format!(
                "record `{}`: {} tokens but {} POS tags",
                self.id,
                t,
                self.pos.len()
            )));
        }
        for m in &self.percentages {
            if m.token_index >= t {
                return Err(Error::Data(format!(
                    "record `{}`: percentage token index {} out of range",
                    self.id, m.token_index
                )));
            }
        }
        for f in &self.facts {
            if f.percentage >= self.percentages.len() {
                return Err(Error::Data(format!(
                    "record `{}`: fact references missing percentage {}",
                    self.id, f.percentage
                )));
            }
            if f.start >= f.end || f.end > t {
                return Err(Error::InvalidSpan(format!(
                    "record `{}`: {}[{}, {})",
                    self.id, f.role, f.start, f.end
                )));
            }
        }
        Ok(())
    }
}

/// One tagging input: a sentence seen from one percentage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub sentence_id: String,
    pub percentage: Option<usize>,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub pct_indicator: Vec<u8>,
    pub mask: Vec<u8>,
    pub gold: Vec<Tag>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gold_spans(&self) -> Vec<Span> {
        crate::codec::decode_lenient(&self.gold)
    }
}

/// One instance per percentage, each with a one-hot mask on that
/// percentage's token and gold tags from that percentage's facts. A record
/// without percentages yields a single instance with an all-zero mask and
/// its `entities` as gold.
pub fn expand_instances(rec: &SentenceRecord) -> Result<Vec<Instance>> {
    rec.validate()?;
    let t = rec.len();
    let mut indicator = vec![0u8; t];
    for m in &rec.percentages {
        indicator[m.token_index] = 1;
    }
    if rec.percentages.is_empty() {
        return Ok(vec![Instance {
            sentence_id: rec.id.clone(),
            percentage: None,
            tokens: rec.tokens.clone(),
            pos: rec.pos.clone(),
            pct_indicator: indicator,
            mask: vec![0; t],
            gold: encode(&rec.entities, t)?,
        }]);
    }
    rec.percentages
        .iter()
        .enumerate()
        .map(|(p, m)| {
            let spans: Vec<Span> = rec
                .facts
                .iter()
                .filter(|f| f.percentage == p)
                .map(|f| Span::new(f.role.clone(), f.start, f.end))
                .collect();
            let mut mask = vec![0u8; t];
            mask[m.token_index] = 1;
            Ok(Instance {
                sentence_id: rec.id.clone(),
                percentage: Some(p),
                tokens: rec.tokens.clone(),
                pos: rec.pos.clone(),
                pct_indicator: indicator.clone(),
                mask,
                gold: encode(&spans, t)?,
            })
        })
        .collect()
}

/// Sentence filter applied before expansion.
pub type SentenceFilter = fn(&SentenceRecord) -> bool;

/// The default filter keeps every sentence.
pub fn keep_all(_: &SentenceRecord) -> bool {
    true
}

pub fn expand_corpus(records: &[SentenceRecord], filter: SentenceFilter) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| filter(r)) {
        out.extend(expand_instances(r)?);
    }
    Ok(out)
}

pub fn parse_records(text: &str, origin: &str) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn records_to_string(records: &[SentenceRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string())
}

pub fn write_records(path: &Path, records: &[SentenceRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(records_to_string(records)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Records,
    Conll,
}

/// Records when the first non-blank line looks like a JSON object.
pub fn sniff_format(text: &str) -> DataFormat {
    match text.lines().find(|l| !l.trim().is_empty()) {
        Some(l) if l.trim_start().starts_with('{') => DataFormat::Records,
        _ => DataFormat::Conll,
    }
}

/// Load a dataset in either format.
pub fn load_dataset(path: &Path, format: Option<DataFormat>) -> Result<Vec<SentenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    match format.unwrap_or_else(|| sniff_format(&text)) {
        DataFormat::Records => parse_records(&text, &origin),
        DataFormat::Conll => parse_conll(&text, &origin),
    }
}

/// Records built from whitespace-tokenized lines, with the recognizer's
/// percentages and no facts. A line may carry POS tags after a tab; without
/// them every token gets `X`.
pub fn annotate_lines(text: &str, origin: &str) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (tok_part, pos_part) = match line.split_once('\t') {
            Some((a, b)) => (a, Some(b)),
            None => (line, None),
        };
        let tokens: Vec<String> = tok_part.split_whitespace().map(str::to_string).collect();
        let pos: Vec<String> = match pos_part {
            Some(p) => p.split_whitespace().map(str::to_string).collect(),
            None => vec!["X".to_string(); tokens.len()],
        };
        if pos.len() != tokens.len() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("{} tokens but {} POS tags", tokens.len(), pos.len()),
            });
        }
        let percentages = recognize_percentages(&tokens);
        out.push(SentenceRecord {
            id: format!("line{}", i + 1),
            tokens,
            pos,
            percentages,
            facts: Vec::new(),
            entities: Vec::new(),
        });
    }
    Ok(out)
}
