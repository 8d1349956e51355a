use std::fs;
use std::path::Path;

use super::SentenceRecord;
use crate::codec::Span;
use crate::error::{Error, Result};

/// Load a CoNLL-2003 style file: `token POS chunk NER` per line, sentences
/// separated by blank lines, `-DOCSTART-` lines skipped. NER tags may be
/// IOB1 or IOB2; they are stored as spans and re-encoded as BIOUL on
/// expansion.
pub fn load_conll(path: &Path) -> Result<Vec<SentenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, &path.display().to_string())
}

pub fn parse_conll(text: &str, origin: &str) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut pos = Vec::new();
    let mut ner: Vec<(usize, String)> = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, pos: &mut Vec<String>, ner: &mut Vec<(usize, String)>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let tags: Vec<&str> = ner.iter().map(|(_, t)| t.as_str()).collect();
        let entities = iob_spans(&tags).map_err(|(k, msg)| Error::Parse {
            path: origin.to_string(),
            line: ner[k].0,
            message: msg,
        })?;
        out.push(SentenceRecord {
            id: format!("conll{}", out.len() + 1),
            tokens: std::mem::take(tokens),
            pos: std::mem::take(pos),
            percentages: Vec::new(),
            facts: Vec::new(),
            entities,
        });
        ner.clear();
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut pos, &mut ner)?;
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            flush(&mut tokens, &mut pos, &mut ner)?;
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: line_no,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        tokens.push(cols[0].to_string());
        pos.push(cols[1].to_string());
        ner.push((line_no, cols[3].to_string()));
    }
    flush(&mut tokens, &mut pos, &mut ner)?;
    Ok(out)
}

/// Spans from IOB1/IOB2 tags. `I-X` continues a chunk only when the previous
/// tag has type `X`; `B-X` always opens one.
fn iob_spans(tags: &[&str]) -> std::result::Result<Vec<Span>, (usize, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = if *tag == "O" {
            ("O", "")
        } else {
            match tag.split_once('-') {
                Some((p @ ("B" | "I"), t)) if !t.is_empty() => (p, t),
                _ => return Err((i, format!("malformed NER tag `{tag}`"))),
            }
        };
        let continues = prefix == "I" && matches!(open, Some((_, t)) if t == ty);
        if !continues {
            if let Some((s, t)) = open.take() {
                spans.push(Span::new(t, s, i));
            }
            if prefix != "O" {
                open = Some((i, ty));
            }
        }
    }
    if let Some((s, t)) = open {
        spans.push(Span::new(t, s, tags.len()));
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Tag;
    use crate::corpus::expand_instances;

    fn gold(text: &str) -> Vec<Vec<Tag>> {
        parse_conll(text, "t")
            .unwrap()
            .iter()
            .map(|r| expand_instances(r).unwrap().remove(0).gold)
            .collect()
    }

    #[test]
    fn singleton_becomes_unit() {
        assert_eq!(gold("EU NNP I-NP I-ORG\n"), vec![vec![Tag::U("ORG".into())]]);
    }

    #[test]
    fn iob1_run_becomes_begin_last() {
        let g = gold("Peter NNP I-NP I-PER\nBlackburn NNP I-NP I-PER\n");
        assert_eq!(g[0], vec![Tag::B("PER".into()), Tag::L("PER".into())]);
    }

    #[test]
    fn iob1_b_splits_adjacent_same_type() {
        let text = "a NN O I-LOC\nb NN O I-LOC\nc NN O B-LOC\nd NN O O\n";
        let recs = parse_conll(text, "t").unwrap();
        assert_eq!(recs[0].entities, vec![Span::new("LOC", 0, 2), Span::new("LOC", 2, 3)]);
    }

    #[test]
    fn docstart_and_blank_lines_split_sentences() {
        let text = "-DOCSTART- -X- -X- O\n\nEU NNP I-NP I-ORG\nrejects VBZ I-VP O\n\nPeter NNP I-NP I-PER\n";
        let recs = parse_conll(text, "t").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].tokens, vec!["EU", "rejects"]);
        assert!(recs.iter().all(|r| r.percentages.is_empty()));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse_conll("EU NNP I-NP I-ORG\nbad line\n", "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_conll("EU NNP I-NP I-ORG\nx NN O Z-ORG\n", "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
