//! Plot-ready export of the aspect attention, gates and association
//! matrices for one example. The schema is described in the guide's
//! "Attention dumps" chapter.

use serde::{Deserialize, Serialize};

use crate::aggcn::{build_dependency_matrix, weight_matrix};
use crate::autodiff::Tape;
use crate::data::{Example, Lexicon};
use crate::error::Result;
use crate::model::AomModel;

pub const DUMP_FORMAT: &str = "aom-attention/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub token: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenValue {
    pub token: String,
    pub value: f64,
}

/// Word-word and word-block sub-blocks of an `(m+n)×(m+n)` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blocks {
    pub word_word: Vec<Vec<f64>>,
    pub word_block: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub format: String,
    pub example_id: String,
    pub words: Vec<String>,
    /// `"<v0>"`, `"<v1>"`, … for the visual blocks.
    pub blocks: Vec<String>,
    /// Candidate aspect phrases, in column order of `alpha`.
    pub aspects: Vec<String>,
    pub lexicon_scores: Vec<f64>,
    /// One row per block then word; empty without candidates or with the
    /// attention module disabled.
    pub alpha: Vec<TokenWeights>,
    pub beta: Vec<TokenValue>,
    pub dependency: Blocks,
    pub association: Blocks,
}

fn blocks(rows: &[f64], m: usize, n: usize) -> Blocks {
    let s = m + n;
    Blocks {
        word_word: (0..n).map(|i| rows[(m + i) * s + m..(m + i + 1) * s].to_vec()).collect(),
        word_block: (0..n).map(|i| rows[(m + i) * s..(m + i) * s + m].to_vec()).collect(),
    }
}

pub fn attention_dump(model: &AomModel, example: &Example, lexicon: &Lexicon) -> Result<AttentionDump> {
    let (m, n) = (example.m(), example.n());
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, example, lexicon)?;
    let block_labels: Vec<String> = (0..m).map(|i| format!("<v{i}>")).collect();
    let node_labels: Vec<String> = block_labels.iter().chain(&example.tokens).cloned().collect();

    let alpha = match fp.a3m.alpha {
        Some(a) => {
            let t = tape.value(a);
            let l = t.shape()[1];
            node_labels
                .iter()
                .enumerate()
                .map(|(i, tok)| TokenWeights { token: tok.clone(), weights: t.data()[i * l..(i + 1) * l].to_vec() })
                .collect()
        }
        None => Vec::new(),
    };
    let beta = match fp.a3m.beta {
        Some(b) => node_labels
            .iter()
            .zip(tape.value(b).data())
            .map(|(tok, &v)| TokenValue { token: tok.clone(), value: v })
            .collect(),
        None => Vec::new(),
    };

    let (dependency, association) = match &fp.aggcn {
        Some(out) => (out.dependency.clone(), tape.value(out.association).data().to_vec()),
        None => {
            let d = build_dependency_matrix(&example.dep_heads, &example.aspect_word_flags(), m, n)?;
            let nodes = tape.gather_rows(fp.a3m.h_hat, &fp.layout.node_rows())?;
            let a = weight_matrix(&mut tape, &d, nodes)?;
            (d, tape.value(a).data().to_vec())
        }
    };

    Ok(AttentionDump {
        format: DUMP_FORMAT.into(),
        example_id: example.id.clone(),
        words: example.tokens.clone(),
        blocks: block_labels,
        aspects: example.candidate_aspects.iter().map(|s| example.tokens[s.start..=s.end].join(" ")).collect(),
        lexicon_scores: model.sentiment_scores(example, lexicon),
        alpha,
        beta,
        dependency: blocks(dependency.to_tensor().data(), m, n),
        association: blocks(&association, m, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, synth_lexicon, SynthConfig, Vocab};
    use crate::model::ModelConfig;

    #[test]
    fn shapes_follow_the_example() {
        let data = synth_dataset(&SynthConfig { count: 2, ..SynthConfig::default() });
        let ex = &data[0];
        let model = AomModel::new(ModelConfig::default(), Vocab::build([data.as_slice()])).unwrap();
        let dump = attention_dump(&model, ex, &synth_lexicon()).unwrap();
        let (m, n, l) = (ex.m(), ex.n(), ex.candidate_aspects.len());
        assert_eq!(dump.alpha.len(), m + n);
        assert!(dump.alpha.iter().all(|r| r.weights.len() == l && (r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9));
        assert!(dump.beta.iter().all(|b| b.value > 0.0 && b.value < 1.0));
        assert_eq!(dump.dependency.word_word.len(), n);
        assert!(dump.association.word_block.iter().all(|r| r.len() == m));
        assert_eq!(dump.alpha[m].token, ex.tokens[0]);
    }
}
