use std::collections::BTreeMap;
use std::path::Path;

use crate::error::DataError;

/// Case-insensitive word → affective score map. Scores lie in `[-1, 1]`;
/// unknown words score `0.0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    scores: BTreeMap<String, f64>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, score: f64) -> Result<Option<f64>, DataError> {
        if !(-1.0..=1.0).contains(&score) {
            return Err(DataError::Lexicon { line: 0, message: format!("score {score} for {word:?} outside [-1, 1]") });
        }
        Ok(self.scores.insert(word.to_lowercase(), score))
    }

    pub fn score(&self, word: &str) -> f64 {
        self.scores.get(&word.to_lowercase()).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.scores.contains_key(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Parses `word<TAB>score` lines. Returns the lexicon and any
    /// duplicate-word warnings (the last occurrence wins).
    pub fn parse(text: &str) -> Result<(Lexicon, Vec<String>), DataError> {
        let mut lex = Lexicon::new();
        let mut warnings = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (word, score) = raw
                .split_once('\t')
                .ok_or_else(|| DataError::Lexicon { line, message: "expected word<TAB>score".into() })?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| DataError::Lexicon { line, message: format!("bad score {score:?}") })?;
            if !(-1.0..=1.0).contains(&score) {
                return Err(DataError::Lexicon { line, message: format!("score {score} outside [-1, 1]") });
            }
            if lex.scores.insert(word.trim().to_lowercase(), score).is_some() {
                warnings.push(format!("line {line}: duplicate entry for {:?}, keeping the later score", word.trim()));
            }
        }
        Ok((lex, warnings))
    }

    pub fn to_tsv(&self) -> String {
        self.scores.iter().map(|(w, s)| format!("{w}\t{s}\n")).collect()
    }
}

/// Reads a lexicon file, logging duplicate-word warnings.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, DataError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let (lex, warnings) = Lexicon::parse(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(lex)
}
