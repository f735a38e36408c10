//! Deterministic synthetic image-text data.
//!
//! Each sentence is one or two aspect clauses `ASPECT… SENTIMENT-WORD`
//! joined by `and`, padded with filler words and a non-aspect noun phrase.
//! The polarity of an aspect is the sign of its sentiment word's lexicon
//! score. Sentiment words come from large pools split in two halves:
//! training sets draw from the first half and `heldout_words` sets from the
//! second, so on held-out text only the lexicon carries their polarity.
//!
//! Visual blocks carry a relation direction (`+r` when the image is related
//! to the text, `-r` otherwise), plus the first aspect's polarity direction
//! when related. The relation label is linearly separable on the mean block.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::example::{Example, Polarity, Span, Triple};
use super::lexicon::Lexicon;
use crate::autodiff::{seeded_rng, Rng};

const ASPECT_NOUNS: &[&str] = &[
    "food", "service", "staff", "mayor", "city", "game", "team", "movie", "phone", "hotel", "music", "crowd",
    "price", "weather", "coach", "show",
];
const ASPECT_MODIFIERS: &[&str] = &["downtown", "home", "main", "local"];
const DISTRACTOR_NOUNS: &[&str] = &["thing", "day", "time", "way", "picture", "photo", "lot", "year"];
const FILLERS: &[&str] = &["today", "really", "so", "just", "yesterday", "here", "wow", "honestly"];

const POSITIVE_STEMS: &[&str] = &["good", "great", "lovely", "awesome", "nice", "happy", "amazing", "excellent"];
const NEGATIVE_STEMS: &[&str] = &["bad", "awful", "terrible", "poor", "sad", "horrible", "boring", "nasty"];
const NEUTRAL_STEMS: &[&str] = &["usual", "plain", "normal", "standard", "regular", "typical", "ordinary", "common"];

/// Variants per stem; each polarity pool holds `8 * POOL_VARIANTS` words.
const POOL_VARIANTS: usize = 16;

/// Fixed seed for the planted visual directions, shared by every split.
const WORLD_SEED: u64 = 0x5EED_A0A0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub m: usize,
    pub dv: usize,
    /// Draw sentiment words from the held-out half of each pool instead of
    /// the regular half; the two halves share no word.
    pub heldout_words: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 7, count: 64, n_min: 4, n_max: 10, m: 4, dv: 8, heldout_words: false }
    }
}

fn pool(stems: &[&str]) -> Vec<String> {
    (0..POOL_VARIANTS)
        .flat_map(|k| stems.iter().map(move |s| if k == 0 { s.to_string() } else { format!("{s}{k}") }))
        .collect()
}

pub fn positive_words() -> Vec<String> {
    pool(POSITIVE_STEMS)
}

pub fn negative_words() -> Vec<String> {
    pool(NEGATIVE_STEMS)
}

pub fn neutral_words() -> Vec<String> {
    pool(NEUTRAL_STEMS)
}

/// Lexicon scoring every synthetic sentiment word: positive words in
/// `[0.5, 1]`, negative in `[-1, -0.5]`, neutral words `0`.
pub fn synth_lexicon() -> Lexicon {
    let mut rng = seeded_rng(WORLD_SEED ^ 0x1E1);
    let mut lex = Lexicon::new();
    for w in positive_words() {
        lex.insert(&w, rng.gen_range(0.5..=1.0)).expect("in range");
    }
    for w in negative_words() {
        lex.insert(&w, -rng.gen_range(0.5..=1.0)).expect("in range");
    }
    for w in neutral_words() {
        lex.insert(&w, 0.0).expect("in range");
    }
    lex
}

struct World {
    relation: Vec<f64>,
    polarity: [Vec<f64>; 3],
}

impl World {
    fn new(dv: usize) -> World {
        let mut rng = seeded_rng(WORLD_SEED);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        // Gram-Schmidt on random vectors; once dv is exhausted later
        // directions are left unnormalised random vectors.
        for _ in 0..4 {
            let mut v: Vec<f64> = (0..dv).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            basis.push(v);
        }
        let relation = basis.remove(0);
        World { relation, polarity: [basis[0].clone(), basis[1].clone(), basis[2].clone()] }
    }
}

fn pick<'a>(rng: &mut Rng, words: &'a [&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty pool")
}

/// Generates `count` examples. Sentence lengths fall in `n_min..=n_max`
/// whenever `n_min >= 2`.
pub fn synth_dataset(cfg: &SynthConfig) -> Vec<Example> {
    let world = World::new(cfg.dv);
    let mut rng = seeded_rng(cfg.seed);
    let half = |words: Vec<String>| {
        let mid = words.len() / 2;
        if cfg.heldout_words { words[mid..].to_vec() } else { words[..mid].to_vec() }
    };
    let pools = [half(positive_words()), half(neutral_words()), half(negative_words())];
    (0..cfg.count).map(|i| synth_one(cfg, i, &world, &pools, &mut rng)).collect()
}

fn synth_one(cfg: &SynthConfig, i: usize, world: &World, pools: &[Vec<String>; 3], rng: &mut Rng) -> Example {
    let n_max = cfg.n_max.max(2);
    let target_n = rng.gen_range(cfg.n_min.clamp(2, n_max)..=n_max);

    // Plan the aspect clauses: (two-token aspect?, polarity).
    let mut clauses: Vec<(bool, Polarity)> = Vec::new();
    let want = if target_n >= 5 && rng.gen_bool(0.5) { 2 } else { 1 };
    let mut used = 0;
    for c in 0..want {
        let long = rng.gen_bool(0.3);
        let cost = if long { 3 } else { 2 } + usize::from(c > 0);
        if used + cost > target_n {
            if used == 0 {
                clauses.push((false, *Polarity::ALL.choose(rng).unwrap()));
                used += 2;
            }
            break;
        }
        clauses.push((long, *Polarity::ALL.choose(rng).unwrap()));
        used += cost;
    }

    let lead = if target_n > used { rng.gen_range(0..=(target_n - used).min(2)) } else { 0 };
    let mut tokens: Vec<String> = Vec::new();
    let mut heads: Vec<i64> = Vec::new();
    let mut fillers_at_root: Vec<usize> = Vec::new();
    for _ in 0..lead {
        fillers_at_root.push(tokens.len());
        tokens.push(pick(rng, FILLERS).to_string());
        heads.push(0); // fixed below
    }

    let mut root: Option<usize> = None;
    let mut and_pos: Option<usize> = None;
    let mut candidates = Vec::new();
    let mut gold = Vec::new();
    for (c, (long, polarity)) in clauses.iter().enumerate() {
        if c > 0 {
            and_pos = Some(tokens.len());
            tokens.push("and".into());
            heads.push(root.expect("first clause sets root") as i64);
        }
        let start = tokens.len();
        if *long {
            tokens.push(pick(rng, ASPECT_MODIFIERS).to_string());
            heads.push((start + 1) as i64);
        }
        let noun = tokens.len();
        tokens.push(pick(rng, ASPECT_NOUNS).to_string());
        heads.push(match (root, and_pos) {
            (None, _) => -1,
            (Some(_), Some(a)) => a as i64,
            (Some(r), None) => r as i64,
        });
        root.get_or_insert(noun);
        let word = pools[polarity.index()].choose(rng).unwrap().clone();
        tokens.push(word);
        heads.push(noun as i64);
        candidates.push(Span::new(start, noun));
        gold.push(Triple { span: Span::new(start, noun), polarity: *polarity });
    }
    let root = root.expect("at least one clause");

    // Pad to the target length with a distractor noun phrase and fillers.
    if tokens.len() + 2 <= target_n && rng.gen_bool(0.6) {
        let with = tokens.len();
        tokens.push("with".into());
        heads.push(root as i64);
        tokens.push(pick(rng, DISTRACTOR_NOUNS).to_string());
        heads.push(with as i64);
        candidates.push(Span::new(with + 1, with + 1));
    }
    while tokens.len() < target_n {
        fillers_at_root.push(tokens.len());
        tokens.push(pick(rng, FILLERS).to_string());
        heads.push(0);
    }
    for f in fillers_at_root {
        heads[f] = root as i64;
    }

    let related = rng.gen_bool(0.5);
    let first_polarity = gold[0].polarity;
    let noise = 0.3 / (cfg.dv.max(1) as f64).sqrt();
    let visual_features = (0..cfg.m)
        .map(|_| {
            (0..cfg.dv)
                .map(|k| {
                    let mut v = rng.gen_range(-noise..noise);
                    v += if related { world.relation[k] } else { -world.relation[k] };
                    if related {
                        v += world.polarity[first_polarity.index()][k];
                    }
                    v
                })
                .collect()
        })
        .collect();

    Example {
        id: format!("synth-{}-{i}", cfg.seed),
        tokens,
        visual_features,
        candidate_aspects: candidates,
        dep_heads: heads,
        gold_triples: gold,
        image_related: Some(related),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig { count: 200, ..SynthConfig::default() };
        let a = synth_dataset(&cfg);
        assert_eq!(a, synth_dataset(&cfg));
        for ex in &a {
            assert!(ex.validate().unwrap().is_empty(), "{ex:?}");
            assert!((cfg.n_min..=cfg.n_max).contains(&ex.n()), "{}", ex.n());
            assert_eq!(ex.m(), cfg.m);
            assert_eq!(ex.dv(), cfg.dv);
        }
    }

    #[test]
    fn polarity_follows_lexicon() {
        let lex = synth_lexicon();
        for ex in synth_dataset(&SynthConfig::default()) {
            for t in &ex.gold_triples {
                let score = lex.score(&ex.tokens[t.span.end + 1]);
                let expected = if score >= 0.5 {
                    Polarity::Positive
                } else if score <= -0.5 {
                    Polarity::Negative
                } else {
                    Polarity::Neutral
                };
                assert_eq!(t.polarity, expected);
            }
        }
    }

    #[test]
    fn relation_is_linearly_separable() {
        let world = World::new(8);
        for ex in synth_dataset(&SynthConfig { count: 300, ..SynthConfig::default() }) {
            let proj: f64 = (0..8)
                .map(|k| ex.visual_features.iter().map(|r| r[k]).sum::<f64>() / 4.0 * world.relation[k])
                .sum();
            assert_eq!(proj > 0.0, ex.image_related.unwrap());
            assert!(proj.abs() > 0.5);
        }
    }
}
