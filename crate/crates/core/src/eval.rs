//! Corpus-level metrics for joint extraction (MABSA), span extraction
//! (MATE) and sentiment classification of known aspects (MASC).

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{Example, Lexicon, Polarity, Span, Triple};
use crate::model::AomModel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "MABSA")]
    Mabsa,
    #[serde(rename = "MATE")]
    Mate,
    #[serde(rename = "MASC")]
    Masc,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mabsa => "MABSA",
            Task::Mate => "MATE",
            Task::Masc => "MASC",
        })
    }
}

/// For MABSA and MATE, `precision`/`recall`/`f1` are micro-averaged and
/// `accuracy` is the fraction of sentences predicted exactly. For MASC,
/// `precision`/`recall`/`f1` are macro-averaged over the three polarities,
/// `tp` counts correct aspects and `fp`/`fn` both count wrong ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Size of the multiset intersection of `pred` and `gold`.
fn matched<K: Eq + Hash>(pred: impl IntoIterator<Item = K>, gold: impl IntoIterator<Item = K>) -> usize {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    pred.into_iter()
        .filter(|p| match counts.get_mut(p) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

fn micro<K: Eq + Hash + Clone>(task: Task, pairs: &[(Vec<K>, Vec<K>)]) -> MetricReport
{
    let (mut tp, mut n_pred, mut n_gold, mut exact) = (0, 0, 0, 0);
    for (pred, gold) in pairs {
        let m = matched(pred.iter().cloned(), gold.iter().cloned());
        tp += m;
        n_pred += pred.len();
        n_gold += gold.len();
        if m == pred.len() && m == gold.len() {
            exact += 1;
        }
    }
    let precision = ratio(tp, n_pred);
    let recall = ratio(tp, n_gold);
    MetricReport {
        task,
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: ratio(exact, pairs.len()),
        tp,
        fp: n_pred - tp,
        fn_: n_gold - tp,
    }
}

/// Triple-level micro P/R/F1 over `(predicted, gold)` pairs, one per sentence.
pub fn mabsa_metrics(pairs: &[(Vec<Triple>, Vec<Triple>)]) -> MetricReport {
    micro(Task::Mabsa, pairs)
}

/// Span-level micro P/R/F1; sentiment is ignored.
pub fn mate_metrics(pairs: &[(Vec<Triple>, Vec<Triple>)]) -> MetricReport {
    let spans: Vec<(Vec<Span>, Vec<Span>)> = pairs
        .iter()
        .map(|(p, g)| (p.iter().map(|t| t.span).collect(), g.iter().map(|t| t.span).collect()))
        .collect();
    micro(Task::Mate, &spans)
}

/// Accuracy and macro-F1 over `(gold, predicted)` polarities.
pub fn masc_from_predictions(pairs: &[(Polarity, Polarity)]) -> MetricReport {
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let mut ps = 0.0;
    let mut rs = 0.0;
    let mut fs = 0.0;
    for c in Polarity::ALL {
        let tp = pairs.iter().filter(|(g, p)| *g == c && *p == c).count();
        let pred = pairs.iter().filter(|(_, p)| *p == c).count();
        let gold = pairs.iter().filter(|(g, _)| *g == c).count();
        let (p, r) = (ratio(tp, pred), ratio(tp, gold));
        ps += p;
        rs += r;
        fs += f1_score(p, r);
    }
    MetricReport {
        task: Task::Masc,
        precision: ps / 3.0,
        recall: rs / 3.0,
        f1: fs / 3.0,
        accuracy: ratio(correct, pairs.len()),
        tp: correct,
        fp: pairs.len() - correct,
        fn_: pairs.len() - correct,
    }
}

/// Sentiment accuracy of `model` with every gold span teacher-forced.
pub fn masc_metrics(model: &AomModel, examples: &[Example], lexicon: &Lexicon) -> Result<MetricReport> {
    let mut pairs = Vec::new();
    for ex in examples {
        pairs.extend(model.masc_predictions(ex, lexicon)?);
    }
    Ok(masc_from_predictions(&pairs))
}

/// All three reports for `model` on `examples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mabsa: MetricReport,
    pub mate: MetricReport,
    pub masc: MetricReport,
}

pub fn evaluate(model: &AomModel, examples: &[Example], lexicon: &Lexicon) -> Result<Evaluation> {
    let mut pairs = Vec::with_capacity(examples.len());
    for ex in examples {
        pairs.push((model.predict(ex, lexicon)?, ex.gold_triples.clone()));
    }
    Ok(Evaluation {
        mabsa: mabsa_metrics(&pairs),
        mate: mate_metrics(&pairs),
        masc: masc_metrics(model, examples, lexicon)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::*;

    fn t(s: usize, e: usize, p: Polarity) -> Triple {
        Triple::new(s, e, p)
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![t(0, 1, Positive), t(3, 3, Negative)];
        let r = mabsa_metrics(&[(g.clone(), g)]);
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn half_recall() {
        let r = mabsa_metrics(&[(vec![t(1, 2, Positive)], vec![t(1, 2, Positive), t(4, 5, Negative)])]);
        assert_eq!((r.precision, r.recall, r.tp, r.fp, r.fn_), (1.0, 0.5, 1, 0, 1));
        assert_eq!(r.f1, 2.0 / 3.0);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let r = mabsa_metrics(&[(vec![], vec![t(0, 0, Neutral)])]);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mate_ignores_sentiment() {
        let pairs = [(vec![t(1, 2, Negative)], vec![t(1, 2, Positive)])];
        let mate = mate_metrics(&pairs);
        assert_eq!((mate.precision, mate.recall, mate.f1), (1.0, 1.0, 1.0));
        assert_eq!(mabsa_metrics(&pairs).f1, 0.0);
    }

    #[test]
    fn exact_spans_only() {
        let r = mate_metrics(&[(vec![t(1, 3, Positive)], vec![t(1, 2, Positive)])]);
        assert_eq!(r.f1, 0.0);
        let r = mate_metrics(&[(vec![t(0, 0, Positive)], vec![t(2, 2, Positive)])]);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let r = mabsa_metrics(&[(vec![t(0, 0, Positive), t(0, 0, Positive)], vec![t(0, 0, Positive)])]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
    }

    #[test]
    fn masc_single_class() {
        let pairs = vec![(Positive, Positive); 10];
        let r = masc_from_predictions(&pairs);
        assert_eq!(r.accuracy, 1.0);
        assert!((r.f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_fields() {
        let r = mabsa_metrics(&[(vec![t(1, 2, Positive)], vec![t(1, 2, Positive)])]);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["task", "precision", "recall", "f1", "accuracy", "tp", "fp", "fn"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["task"], "MABSA");
    }
}
