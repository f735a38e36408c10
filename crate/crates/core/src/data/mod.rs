//! Dataset ingestion, pointer targets, vocabulary, lexicon and synthetic data.

mod example;
mod lexicon;
mod synth;
mod target;
mod vocab;

pub use example::{check_forest, load_dataset, parse_dataset, write_dataset, Example, Polarity, Span, Triple};
pub use lexicon::{load_lexicon, Lexicon};
pub use synth::{negative_words, neutral_words, positive_words, synth_dataset, synth_lexicon, SynthConfig};
pub use target::{
    decode_target, encode_target, position_token, token_position, DecodedTarget, TargetSequence, EOS,
    NUM_CLASS_TOKENS,
};
pub use vocab::{Vocab, UNK};
