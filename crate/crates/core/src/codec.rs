//! BIOUL span codec and the decode-time gap filling rule for skipped tokens.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled half-open token range `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub role: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(role: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            role: role.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}, {})", self.role, self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
    L(String),
    U(String),
}

impl Tag {
    pub fn role(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(r) | Tag::I(r) | Tag::L(r) | Tag::U(r) => Some(r),
        }
    }

    pub fn is_entity(&self) -> bool {
        !matches!(self, Tag::O)
    }

    /// Tag opens a span (B or U).
    pub fn opens(&self) -> bool {
        matches!(self, Tag::B(_) | Tag::U(_))
    }

    /// Tag closes a span (L or U).
    pub fn closes(&self) -> bool {
        matches!(self, Tag::L(_) | Tag::U(_))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => write!(f, "O"),
            Tag::B(r) => write!(f, "B-{r}"),
            Tag::I(r) => write!(f, "I-{r}"),
            Tag::L(r) => write!(f, "L-{r}"),
            Tag::U(r) => write!(f, "U-{r}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let bad = || Error::Data(format!("unrecognized BIOUL tag `{s}`"));
        let (prefix, role) = s.split_once('-').ok_or_else(bad)?;
        if role.is_empty() {
            return Err(bad());
        }
        let role = role.to_string();
        match prefix {
            "B" => Ok(Tag::B(role)),
            "I" => Ok(Tag::I(role)),
            "L" | "E" => Ok(Tag::L(role)),
            "U" | "S" => Ok(Tag::U(role)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered tag inventory. Id 0 is always `O`; each role contributes
/// B, I, L, U in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    roles: Vec<String>,
    tags: Vec<Tag>,
}

impl From<Vec<String>> for TagSet {
    fn from(roles: Vec<String>) -> Self {
        TagSet::new(roles)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(ts: TagSet) -> Self {
        ts.roles
    }
}

impl TagSet {
    pub fn new<I, S>(roles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let roles: BTreeSet<String> = roles.into_iter().map(Into::into).collect();
        let roles: Vec<String> = roles.into_iter().collect();
        let mut tags = vec![Tag::O];
        for r in &roles {
            tags.push(Tag::B(r.clone()));
            tags.push(Tag::I(r.clone()));
            tags.push(Tag::L(r.clone()));
            tags.push(Tag::U(r.clone()));
        }
        TagSet { roles, tags }
    }

    pub fn part_whole() -> Self {
        TagSet::new(["part", "whole"])
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, id: usize) -> &Tag {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn id(&self, tag: &Tag) -> Result<usize> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::Data(format!("tag `{tag}` is not in the tag set")))
    }

    pub fn ids(&self, tags: &[Tag]) -> Result<Vec<usize>> {
        tags.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_tags(&self, ids: &[usize]) -> Vec<Tag> {
        ids.iter().map(|&i| self.tags[i].clone()).collect()
    }

    /// BIOUL validity of the bigram `prev -> next`. `None` stands for the
    /// sequence boundary.
    pub fn transition_allowed(&self, prev: Option<usize>, next: Option<usize>) -> bool {
        let prev = prev.map(|i| &self.tags[i]);
        let next = next.map(|i| &self.tags[i]);
        let prev_open = match prev {
            Some(Tag::B(r)) | Some(Tag::I(r)) => Some(r.as_str()),
            _ => None,
        };
        match (prev_open, next) {
            (Some(r), Some(Tag::I(n))) | (Some(r), Some(Tag::L(n))) => r == n,
            (Some(_), _) => false,
            (None, Some(Tag::I(_))) | (None, Some(Tag::L(_))) => false,
            (None, _) => true,
        }
    }
}

/// BIOUL encoding of non-overlapping spans over `len` tokens.
pub fn encode(spans: &[Span], len: usize) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; len];
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut last_end = 0;
    for (k, s) in sorted.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            return Err(Error::InvalidSpan(format!("{s} for length {len}")));
        }
        if k > 0 && s.start < last_end {
            return Err(Error::OverlappingSpans(format!("{} and {s}", sorted[k - 1])));
        }
        last_end = s.end;
        let role = &s.role;
        if s.len() == 1 {
            tags[s.start] = Tag::U(role.clone());
        } else {
            tags[s.start] = Tag::B(role.clone());
            for t in &mut tags[s.start + 1..s.end - 1] {
                *t = Tag::I(role.clone());
            }
            tags[s.end - 1] = Tag::L(role.clone());
        }
    }
    Ok(tags)
}

/// Exact inverse of [`encode`]; any schema violation is an error naming the
/// first offending index.
pub fn decode_strict(tags: &[Tag]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let invalid = |index: usize, reason: String| Error::InvalidTagSequence { index, reason };
    for (i, tag) in tags.iter().enumerate() {
        match (open, tag) {
            (None, Tag::O) => {}
            (None, Tag::U(r)) => spans.push(Span::new(r.clone(), i, i + 1)),
            (None, Tag::B(r)) => open = Some((i, r)),
            (None, t) => return Err(invalid(i, format!("`{t}` without an open span"))),
            (Some((_, r)), Tag::I(n)) if r == n => {}
            (Some((s, r)), Tag::L(n)) if r == n => {
                spans.push(Span::new(r, s, i + 1));
                open = None;
            }
            (Some((_, r)), t) => {
                return Err(invalid(i, format!("`{t}` inside open `{r}` span")));
            }
        }
    }
    if let Some((s, r)) = open {
        return Err(invalid(tags.len(), format!("unterminated `{r}` span from {s}")));
    }
    Ok(spans)
}

/// Lenient decoding for model output, conlleval style: a chunk continues
/// while the role is unchanged and no boundary tag intervenes. B and U
/// always open a new chunk; L and U always close it; I and L without an
/// open chunk of their role start one.
pub fn decode_lenient(tags: &[Tag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let role = tag.role();
        let continues = matches!((open, role), (Some((_, r)), Some(n)) if r == n) && !tag.opens();
        if !continues {
            if let Some((s, r)) = open.take() {
                spans.push(Span::new(r, s, i));
            }
            if let Some(r) = role {
                open = Some((i, r));
            }
        }
        if tag.closes() {
            if let Some((s, r)) = open.take() {
                spans.push(Span::new(r, s, i + 1));
            }
        }
    }
    if let Some((s, r)) = open {
        spans.push(Span::new(r, s, tags.len()));
    }
    spans
}

/// Expand tags predicted on the remained tokens back to the full sentence.
///
/// Remained positions keep their predicted tag. A skipped position becomes
/// `I-x` when its nearest remained neighbours on both sides carry role `x`,
/// the left one being `B-x`/`I-x` and the right one `I-x`/`L-x`; every other
/// skipped position becomes `O`.
pub fn gap_fill(compressed: &[Tag], origin_positions: &[usize], len: usize) -> Result<Vec<Tag>> {
    if compressed.len() != origin_positions.len() {
        return Err(Error::LengthMismatch {
            what: "gap fill",
            left: compressed.len(),
            right: origin_positions.len(),
        });
    }
    let mut full = vec![Tag::O; len];
    for (k, &p) in origin_positions.iter().enumerate() {
        if p >= len {
            return Err(Error::IndexOutOfRange {
                what: "origin position",
                index: p,
                len,
            });
        }
        if k > 0 && p <= origin_positions[k - 1] {
            return Err(Error::Data("origin positions must be strictly increasing".into()));
        }
        full[p] = compressed[k].clone();
    }
    for pair in origin_positions.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        if r - l < 2 {
            continue;
        }
        let fill = match (&full[l], &full[r]) {
            (Tag::B(a) | Tag::I(a), Tag::I(b) | Tag::L(b)) if a == b => Some(a.clone()),
            _ => None,
        };
        if let Some(role) = fill {
            for t in &mut full[l + 1..r] {
                *t = Tag::I(role.clone());
            }
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(&[Span::new("part", 0, 1)], 3).unwrap(), tags("U-part O O"));
        assert_eq!(
            encode(&[Span::new("part", 0, 3)], 3).unwrap(),
            tags("B-part I-part L-part")
        );
        assert_eq!(
            encode(&[Span::new("part", 0, 2), Span::new("whole", 2, 3)], 3).unwrap(),
            tags("B-part L-part U-whole")
        );
    }

    #[test]
    fn encode_rejects_overlap_and_bad_spans() {
        let r = encode(&[Span::new("part", 0, 2), Span::new("whole", 1, 3)], 3);
        assert!(matches!(r, Err(Error::OverlappingSpans(_))));
        assert!(matches!(
            encode(&[Span::new("part", 2, 2)], 3),
            Err(Error::InvalidSpan(_))
        ));
        assert!(matches!(
            encode(&[Span::new("part", 1, 4)], 3),
            Err(Error::InvalidSpan(_))
        ));
    }

    #[test]
    fn strict_decode() {
        assert_eq!(
            decode_strict(&tags("B-part I-part L-part")).unwrap(),
            vec![Span::new("part", 0, 3)]
        );
        match decode_strict(&tags("O I-part L-part")) {
            Err(Error::InvalidTagSequence { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        match decode_strict(&tags("B-part O")) {
            Err(Error::InvalidTagSequence { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(decode_strict(&tags("B-part")).is_err());
    }

    #[test]
    fn lenient_decode() {
        assert_eq!(decode_lenient(&tags("I-part L-part O")), vec![Span::new("part", 0, 2)]);
        assert_eq!(
            decode_lenient(&tags("U-part U-part")),
            vec![Span::new("part", 0, 1), Span::new("part", 1, 2)]
        );
        assert_eq!(
            decode_lenient(&tags("B-part I-whole L-whole")),
            vec![Span::new("part", 0, 1), Span::new("whole", 1, 3)]
        );
        assert_eq!(decode_lenient(&tags("B-part I-part")), vec![Span::new("part", 0, 2)]);
    }

    #[test]
    fn gap_fill_cases() {
        let filled = gap_fill(&tags("B-part L-part"), &[0, 2], 3).unwrap();
        assert_eq!(filled, tags("B-part I-part L-part"));
        let filled = gap_fill(&tags("O O"), &[0, 2], 3).unwrap();
        assert_eq!(filled, tags("O O O"));
        let filled = gap_fill(&tags("L-part B-whole"), &[0, 2], 3).unwrap();
        assert_eq!(filled[1], Tag::O);
        let filled = gap_fill(&tags("B-part L-whole"), &[0, 3], 4).unwrap();
        assert_eq!(filled, tags("B-part O O L-whole"));
    }

    #[test]
    fn gap_fill_identity_without_skips() {
        let t = tags("B-part L-part O U-whole");
        assert_eq!(gap_fill(&t, &[0, 1, 2, 3], 4).unwrap(), t);
    }

    #[test]
    fn gap_fill_rejects_bad_origins() {
        assert!(gap_fill(&tags("O O"), &[1, 1], 3).is_err());
        assert!(gap_fill(&tags("O O"), &[0, 3], 3).is_err());
        assert!(gap_fill(&tags("O"), &[0, 1], 3).is_err());
    }

    #[test]
    fn tag_parsing_and_tagset() {
        assert_eq!("E-PER".parse::<Tag>().unwrap(), Tag::L("PER".into()));
        assert_eq!("S-PER".parse::<Tag>().unwrap(), Tag::U("PER".into()));
        assert!("X-PER".parse::<Tag>().is_err());
        assert!("B-".parse::<Tag>().is_err());
        let ts = TagSet::part_whole();
        assert_eq!(ts.len(), 9);
        assert_eq!(ts.tag(0), &Tag::O);
        assert_eq!(ts.id(&Tag::L("whole".into())).unwrap(), 7);
        let b = ts.id(&Tag::B("part".into())).unwrap();
        let l = ts.id(&Tag::L("part".into())).unwrap();
        let lw = ts.id(&Tag::L("whole".into())).unwrap();
        assert!(ts.transition_allowed(Some(b), Some(l)));
        assert!(!ts.transition_allowed(Some(b), Some(lw)));
        assert!(!ts.transition_allowed(None, Some(l)));
        assert!(!ts.transition_allowed(Some(b), None));
        assert!(ts.transition_allowed(Some(l), None));
    }
}
