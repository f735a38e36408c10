use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Aspect polarity. The discriminant is the class-token index in the pointer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "POS")]
    Positive = 0,
    #[serde(rename = "NEU")]
    Neutral = 1,
    #[serde(rename = "NEG")]
    Negative = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "POS",
            Polarity::Neutral => "NEU",
            Polarity::Negative => "NEG",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "POS" => Ok(Polarity::Positive),
            "NEU" => Ok(Polarity::Neutral),
            "NEG" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// Inclusive token span, serialised as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Aspect-sentiment triple, serialised as `[start, end, "POS"]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, Polarity)", into = "(usize, usize, Polarity)")]
pub struct Triple {
    pub span: Span,
    pub polarity: Polarity,
}

impl Triple {
    pub fn new(start: usize, end: usize, polarity: Polarity) -> Self {
        Triple { span: Span::new(start, end), polarity }
    }
}

impl From<(usize, usize, Polarity)> for Triple {
    fn from((s, e, p): (usize, usize, Polarity)) -> Self {
        Triple::new(s, e, p)
    }
}

impl From<Triple> for (usize, usize, Polarity) {
    fn from(t: Triple) -> Self {
        (t.span.start, t.span.end, t.polarity)
    }
}

/// One image-text instance with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    /// `m` visual-block feature vectors of width `dv`.
    pub visual_features: Vec<Vec<f64>>,
    pub candidate_aspects: Vec<Span>,
    /// Head token per token, `-1` for a root.
    pub dep_heads: Vec<i64>,
    pub gold_triples: Vec<Triple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_related: Option<bool>,
}

impl Example {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn m(&self) -> usize {
        self.visual_features.len()
    }

    pub fn dv(&self) -> usize {
        self.visual_features.first().map_or(0, Vec::len)
    }

    /// Checks every structural invariant. Returns soft warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, (&'static str, String)> {
        let n = self.n();
        if n == 0 {
            return Err(("tokens", "sentence has no tokens".into()));
        }
        let dv = self.dv();
        if dv == 0 && self.m() > 0 {
            return Err(("visual_features", "empty feature vector".into()));
        }
        for (i, row) in self.visual_features.iter().enumerate() {
            if row.len() != dv {
                return Err(("visual_features", format!("block {i} has width {}, expected {dv}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(("visual_features", format!("block {i} holds a non-finite value")));
            }
        }
        for s in &self.candidate_aspects {
            check_span(s, n).map_err(|m| ("candidate_aspects", m))?;
        }
        for t in &self.gold_triples {
            check_span(&t.span, n).map_err(|m| ("gold_triples", m))?;
        }
        check_forest(&self.dep_heads, n).map_err(|m| ("dep_heads", m))?;

        let warnings = self
            .gold_triples
            .iter()
            .filter(|t| !self.candidate_aspects.contains(&t.span))
            .map(|t| {
                format!(
                    "example {:?}: gold span [{}, {}] is not among the candidate aspects",
                    self.id, t.span.start, t.span.end
                )
            })
            .collect();
        Ok(warnings)
    }

    /// Marks every token covered by at least one candidate aspect.
    pub fn aspect_word_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n()];
        for s in &self.candidate_aspects {
            for f in &mut flags[s.start..=s.end.min(self.n().saturating_sub(1))] {
                *f = true;
            }
        }
        flags
    }
}

fn check_span(s: &Span, n: usize) -> Result<(), String> {
    if s.start > s.end || s.end >= n {
        return Err(format!("span [{}, {}] outside 0 <= start <= end < {n}", s.start, s.end));
    }
    Ok(())
}

/// Verifies that `heads` describes a forest over `n` tokens.
pub fn check_forest(heads: &[i64], n: usize) -> Result<(), String> {
    if heads.len() != n {
        return Err(format!("{} heads for {n} tokens", heads.len()));
    }
    for (i, &h) in heads.iter().enumerate() {
        if h < -1 || h >= n as i64 {
            return Err(format!("token {i} has head {h}, outside -1..{n}"));
        }
        if h == i as i64 {
            return Err(format!("cycle: token {i} is its own head"));
        }
    }
    // 0 = unvisited, 1 = on the current path, 2 = reaches a root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start as i64;
        while cur >= 0 && state[cur as usize] == 0 {
            state[cur as usize] = 1;
            path.push(cur as usize);
            cur = heads[cur as usize];
        }
        if cur >= 0 && state[cur as usize] == 1 {
            return Err(format!("cycle through token {cur}"));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Parses JSON-lines examples from a reader. Blank lines are skipped.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<Example>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example =
            serde_json::from_str(&line).map_err(|e| DataError::Parse { line: line_no, message: e.to_string() })?;
        match ex.validate() {
            Ok(warnings) => warnings.iter().for_each(|w| log::warn!("line {line_no}: {w}")),
            Err((field, message)) => {
                return Err(DataError::Invalid { line: line_no, id: ex.id.clone(), field, message });
            }
        }
        out.push(ex);
    }
    Ok(out)
}

/// Loads a JSON-lines dataset, validating every example.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(BufReader::new(file))
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[Example]) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("examples always serialise");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}
