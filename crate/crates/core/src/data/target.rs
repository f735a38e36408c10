//! Flattened pointer-vocabulary targets.
//!
//! Indices `0..4` are the class tokens `POS, NEU, NEG, EOS`; index `4 + j`
//! points at text token `j`. A well-formed sequence is a run of
//! `(start, end, sentiment)` groups followed by `EOS`.

use super::example::{Polarity, Span, Triple};
use crate::error::DataError;

pub const EOS: usize = 3;
pub const NUM_CLASS_TOKENS: usize = 4;

pub fn position_token(pos: usize) -> usize {
    pos + NUM_CLASS_TOKENS
}

pub fn token_position(token: usize) -> Option<usize> {
    token.checked_sub(NUM_CLASS_TOKENS)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub indices: Vec<usize>,
}

impl TargetSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Result of parsing a possibly malformed sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedTarget {
    pub triples: Vec<Triple>,
    pub dropped: usize,
}

/// Encodes triples for a sentence of `n` tokens. Triples are sorted by
/// `(start, end)` first; overlapping spans are rejected.
pub fn encode_target(triples: &[Triple], n: usize) -> Result<TargetSequence, DataError> {
    let mut sorted = triples.to_vec();
    sorted.sort_by_key(|t| (t.span.start, t.span.end));
    for t in &sorted {
        if t.span.start > t.span.end || t.span.end >= n {
            return Err(DataError::Encode(format!(
                "span [{}, {}] invalid for {n} tokens",
                t.span.start, t.span.end
            )));
        }
    }
    if let Some(w) = sorted.windows(2).find(|w| w[0].span.overlaps(&w[1].span)) {
        return Err(DataError::Encode(format!(
            "overlapping gold spans [{}, {}] and [{}, {}]",
            w[0].span.start, w[0].span.end, w[1].span.start, w[1].span.end
        )));
    }
    let mut indices = Vec::with_capacity(3 * sorted.len() + 1);
    for t in &sorted {
        indices.extend([position_token(t.span.start), position_token(t.span.end), t.polarity.index()]);
    }
    indices.push(EOS);
    Ok(TargetSequence { indices })
}

/// Greedily reads complete `(start, end, sentiment)` groups until `EOS`.
/// The first invalid or incomplete group and everything after it are
/// dropped and counted.
pub fn decode_target(seq: &[usize], n: usize) -> DecodedTarget {
    let end = seq.iter().position(|&t| t == EOS).unwrap_or(seq.len());
    let mut triples = Vec::new();
    let mut i = 0;
    while i + 3 <= end {
        let (s, e, p) = (seq[i], seq[i + 1], seq[i + 2]);
        let span = match (token_position(s), token_position(e)) {
            (Some(a), Some(b)) if a <= b && b < n => Span::new(a, b),
            _ => break,
        };
        let Some(polarity) = Polarity::from_index(p) else { break };
        triples.push(Triple { span, polarity });
        i += 3;
    }
    // Anything after EOS also counts as dropped.
    let trailing = seq.len().saturating_sub(end + 1);
    DecodedTarget { triples, dropped: end - i + trailing }
}
