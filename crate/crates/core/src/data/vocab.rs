use std::collections::BTreeMap;

use super::example::Example;

pub const UNK: &str = "<unk>";

/// Lowercased word-level vocabulary. Index 0 is the unknown word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab { words: vec![UNK.to_string()], index: BTreeMap::new() };
        v.index.insert(UNK.to_string(), 0);
        for w in words {
            let w = w.to_lowercase();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Collects every token of the given datasets in first-seen order.
    pub fn build<'a>(datasets: impl IntoIterator<Item = &'a [Example]>) -> Self {
        let words = datasets.into_iter().flat_map(|d| d.iter()).flat_map(|ex| ex.tokens.iter().cloned());
        Self::from_words(words)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}
