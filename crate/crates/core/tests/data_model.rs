mod common;

use std::io::Write as _;

use aom::data::{
    decode_target, encode_target, load_dataset, load_lexicon, synth_dataset, write_dataset, Polarity, SynthConfig,
    Triple,
};
use aom::error::DataError;
use proptest::prelude::*;

/// Hand rule: pointer token = word index + 4, classes POS 0, NEU 1, NEG 2,
/// closing EOS 3, triples in ascending span order.
fn by_hand(triples: &[(usize, usize, usize)]) -> Vec<usize> {
    let mut t = triples.to_vec();
    t.sort();
    let mut out = Vec::new();
    for (s, e, p) in t {
        out.push(s + 4);
        out.push(e + 4);
        out.push(p);
    }
    out.push(3);
    out
}

#[test]
fn worked_targets() {
    let seq = encode_target(&[Triple::new(0, 1, Polarity::Positive)], 5).unwrap().indices;
    assert_eq!(seq, by_hand(&[(0, 1, 0)]));
    assert_eq!(seq, vec![4, 5, 0, 3]);
    let seq = encode_target(&[Triple::new(2, 2, Polarity::Negative)], 5).unwrap().indices;
    assert_eq!(seq, vec![6, 6, 2, 3]);
    assert_eq!(decode_target(&seq, 5).triples, vec![Triple::new(2, 2, Polarity::Negative)]);
}

#[test]
fn dataset_round_trip_keeps_order() {
    let data = synth_dataset(&SynthConfig { seed: 3, count: 20, ..SynthConfig::default() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&path, &data).unwrap();
    let a = load_dataset(&path).unwrap();
    let b = load_dataset(&path).unwrap();
    assert_eq!(a, data);
    assert_eq!(a, b);
}

#[test]
fn load_errors_cite_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(
        f,
        r#"{{"id":"ok","tokens":["a","b","c"],"visual_features":[[0.0],[1.0]],"candidate_aspects":[],"dep_heads":[-1,0,0],"gold_triples":[[0,1,"POS"]]}}"#
    )
    .unwrap();
    writeln!(
        f,
        r#"{{"id":"loop","tokens":["a","b"],"visual_features":[[0.0]],"candidate_aspects":[],"dep_heads":[1,0],"gold_triples":[]}}"#
    )
    .unwrap();
    drop(f);
    match load_dataset(&path) {
        Err(e @ DataError::Invalid { line: 2, .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("loop") && msg.contains("cycle"), "{msg}");
        }
        other => panic!("expected an invalid-line error, got {other:?}"),
    }
}

#[test]
fn lexicon_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lex.tsv");
    std::fs::write(&path, "good\t0.8\ncomplain\t-0.7\n").unwrap();
    let lex = load_lexicon(&path).unwrap();
    assert_eq!(lex.score("GOOD"), 0.8);
    assert_eq!(lex.score("complain"), -0.7);
    assert_eq!(lex.score("table"), 0.0);
    std::fs::write(&path, "good\t1.5\n").unwrap();
    assert!(load_lexicon(&path).is_err());
}

fn disjoint_triples() -> impl Strategy<Value = (Vec<(usize, usize, usize)>, usize)> {
    (1usize..16).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0usize..3, 0usize..3), 0..6).prop_map(move |raw| {
            let mut taken = vec![false; n];
            let mut out = Vec::new();
            for (s, w, p) in raw {
                let e = (s + w).min(n - 1);
                if (s..=e).all(|i| !taken[i]) {
                    (s..=e).for_each(|i| taken[i] = true);
                    out.push((s, e, p));
                }
            }
            (out, n)
        })
    })
}

proptest! {
    #[test]
    fn encoding_follows_the_hand_rule_and_inverts((raw, n) in disjoint_triples()) {
        let triples: Vec<Triple> = raw.iter().map(|&(s, e, p)| Triple::new(s, e, Polarity::ALL[p])).collect();
        let seq = encode_target(&triples, n).unwrap().indices;
        prop_assert_eq!(seq.len(), 3 * triples.len() + 1);
        prop_assert_eq!(&seq, &by_hand(&raw));
        let mut sorted = triples.clone();
        sorted.sort_by_key(|t| (t.span.start, t.span.end));
        let back = decode_target(&seq, n);
        prop_assert_eq!(back.triples, sorted);
        prop_assert_eq!(back.dropped, 0);
    }
}
