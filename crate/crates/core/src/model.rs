//! The assembled model: encoder, aspect-aware attention, aspect-guided GCN
//! and pointer decoder, with the ablation switches.

use serde::{Deserialize, Serialize};

use crate::a3m::{A3m, A3mOutput};
use crate::aggcn::{lexicon_scores, AgGcn, AgGcnOutput};
use crate::autodiff::{seeded_rng, ParamId, ParamStore, Tape, Var};
use crate::data::{decode_target, encode_target, Example, Lexicon, Polarity, Triple, Vocab};
use crate::decoder::{combine_streams, pointer_table, Decoder, DecoderConfig};
use crate::encoder::{Encoder, EncoderConfig, MultimodalSequence};
use crate::error::{Error, Result, TensorError};

const ENCODER_TAG: u64 = 0x454e_434f;
const A3M_TAG: u64 = 0x4133_4d00;
const AGGCN_TAG: u64 = 0x4147_4743;
const DECODER_TAG: u64 = 0x4445_434f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seed: u64,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_len: usize,
    pub dv: usize,
    pub gcn_layers: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub constrained_decoding: bool,
    pub max_decode_len: usize,
    pub no_a3m: bool,
    pub no_aggcn: bool,
    pub no_sentic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seed: 42,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            max_len: 64,
            dv: 8,
            gcn_layers: 2,
            lambda1: 1.0,
            lambda2: 0.5,
            constrained_decoding: true,
            max_decode_len: 16,
            no_a3m: false,
            no_aggcn: false,
            no_sentic: false,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.encoder_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dv: self.dv,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            d_model: self.d_model,
            n_layers: self.decoder_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            lambda1: self.lambda1,
            lambda2: if self.no_aggcn { 0.0 } else { self.lambda2 },
            constrained_decoding: self.constrained_decoding,
            max_decode_len: self.max_decode_len,
        }
    }
}

/// Every intermediate of one forward pass.
pub struct ForwardPass {
    pub layout: MultimodalSequence,
    pub hidden: Var,
    pub encoder_attention: Vec<Vec<Var>>,
    pub a3m: A3mOutput,
    pub aggcn: Option<AgGcnOutput>,
    pub h_tilde: Var,
    pub table: Var,
}

/// Parameter ids per module.
#[derive(Debug, Clone, Default)]
pub struct ParamGroups {
    pub encoder: Vec<ParamId>,
    pub a3m: Vec<ParamId>,
    pub aggcn: Vec<ParamId>,
    pub decoder: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct AomModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub a3m: Option<A3m>,
    pub aggcn: Option<AgGcn>,
    pub decoder: Decoder,
}

impl AomModel {
    /// Each module draws its initial weights from its own stream, so
    /// disabling one leaves the others' initialization unchanged.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        if config.lambda1 < 0.0 || config.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if config.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be positive".into()));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, config.encoder(), vocab.len(), &mut seeded_rng(config.seed ^ ENCODER_TAG))?;
        let a3m = (!config.no_a3m).then(|| A3m::new(&mut store, config.d_model, &mut seeded_rng(config.seed ^ A3M_TAG)));
        let aggcn = (!config.no_aggcn).then(|| {
            AgGcn::new(&mut store, config.d_model, config.gcn_layers, &mut seeded_rng(config.seed ^ AGGCN_TAG))
        });
        let decoder = Decoder::new(&mut store, config.decoder(), &mut seeded_rng(config.seed ^ DECODER_TAG))?;
        Ok(AomModel { config, vocab, store, encoder, a3m, aggcn, decoder })
    }

    pub fn param_groups(&self) -> ParamGroups {
        ParamGroups {
            encoder: self.encoder.params(),
            a3m: self.a3m.as_ref().map(A3m::params).unwrap_or_default(),
            aggcn: self.aggcn.as_ref().map(AgGcn::params).unwrap_or_default(),
            decoder: self.decoder.params(),
        }
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Lexicon scores the model sees for `example` (all zero under `no_sentic`).
    pub fn sentiment_scores(&self, example: &Example, lexicon: &Lexicon) -> Vec<f64> {
        if self.config.no_sentic {
            vec![0.0; example.n()]
        } else {
            lexicon_scores(&example.tokens, lexicon)
        }
    }

    /// Encoder and aspect-aware attention only.
    pub fn encode_attend(&self, tape: &mut Tape, example: &Example) -> Result<(MultimodalSequence, Var, Vec<Vec<Var>>, A3mOutput)> {
        let layout = MultimodalSequence::new(example.m(), example.n());
        let x = self.encoder.embed(tape, &self.store, example, &self.vocab)?;
        let enc = self.encoder.encode(tape, &self.store, x)?;
        let spans = &example.candidate_aspects;
        let a3m = match &self.a3m {
            Some(m) => m.forward(tape, &self.store, enc.hidden, &layout, spans)?,
            None => A3mOutput { h_hat: enc.hidden, alpha: None, beta: None },
        };
        Ok((layout, enc.hidden, enc.attention, a3m))
    }

    pub fn forward(&self, tape: &mut Tape, example: &Example, lexicon: &Lexicon) -> Result<ForwardPass> {
        let (layout, hidden, encoder_attention, a3m) = self.encode_attend(tape, example)?;
        let aggcn = match &self.aggcn {
            Some(g) => {
                let scores = self.sentiment_scores(example, lexicon);
                Some(g.forward(tape, &self.store, a3m.h_hat, &layout, example, &scores)?)
            }
            None => None,
        };
        let dc = &self.decoder.config;
        let h_tilde = combine_streams(tape, a3m.h_hat, aggcn.as_ref().map(|o| o.h_hat_s), dc.lambda1, dc.lambda2)?;
        let text = layout.text();
        let h_tilde_text = tape.slice_rows(h_tilde, text.start, text.end)?;
        let words = self.encoder.word_rows(tape, &self.store, example, &self.vocab)?;
        let classes = tape.param(&self.store, self.decoder.class_embedding);
        let table = pointer_table(tape, h_tilde_text, words, classes)?;
        Ok(ForwardPass { layout, hidden, encoder_attention, a3m, aggcn, h_tilde, table })
    }

    /// Teacher-forced sequence loss for one example.
    pub fn loss(&self, tape: &mut Tape, example: &Example, lexicon: &Lexicon) -> Result<Var> {
        let target = encode_target(&example.gold_triples, example.n())?;
        let fp = self.forward(tape, example, lexicon)?;
        Ok(self.decoder.sequence_loss(tape, &self.store, fp.h_tilde, fp.table, &target.indices)?)
    }

    /// Mean sequence loss over a batch.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[Example], lexicon: &Lexicon) -> Result<Var> {
        if batch.is_empty() {
            return Err(TensorError::Contract("empty batch".into()).into());
        }
        let mut total: Option<Var> = None;
        for ex in batch {
            let l = self.loss(tape, ex, lexicon)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        Ok(tape.scale(total.expect("nonempty"), 1.0 / batch.len() as f64))
    }

    /// Image-text relation logits, `[2]` (related = index 1).
    pub fn trc_logits(&self, tape: &mut Tape, example: &Example) -> Result<Var> {
        let a3m = self
            .a3m
            .as_ref()
            .ok_or_else(|| Error::Config("relation pretraining needs the attention module (no_a3m is set)".into()))?;
        let (layout, _, _, out) = self.encode_attend(tape, example)?;
        Ok(a3m.trc_logits(tape, &self.store, out.h_hat, &layout)?)
    }

    /// Relation cross-entropy for one labelled example.
    pub fn trc_loss(&self, tape: &mut Tape, example: &Example) -> Result<Var> {
        let label = example.image_related.ok_or_else(|| {
            Error::Data(crate::error::DataError::Invalid {
                line: 0,
                id: example.id.clone(),
                field: "image_related",
                message: "relation label missing".into(),
            })
        })?;
        let logits = self.trc_logits(tape, example)?;
        Ok(tape.cross_entropy(logits, usize::from(label))?)
    }

    /// Raw greedy output sequence.
    pub fn generate(&self, example: &Example, lexicon: &Lexicon) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let fp = self.forward(&mut tape, example, lexicon)?;
        Ok(self.decoder.generate(&mut tape, &self.store, fp.h_tilde, fp.table)?)
    }

    /// Predicted aspect-sentiment triples.
    pub fn predict(&self, example: &Example, lexicon: &Lexicon) -> Result<Vec<Triple>> {
        let seq = self.generate(example, lexicon)?;
        Ok(decode_target(&seq, example.n()).triples)
    }

    /// Sentiment of each gold aspect with its span teacher-forced:
    /// `(gold, predicted)` in target order.
    pub fn masc_predictions(&self, example: &Example, lexicon: &Lexicon) -> Result<Vec<(Polarity, Polarity)>> {
        let target = encode_target(&example.gold_triples, example.n())?;
        let mut tape = Tape::new();
        let fp = self.forward(&mut tape, example, lexicon)?;
        let logits = self.decoder.teacher_forced_logits(&mut tape, &self.store, fp.h_tilde, fp.table, &target.indices)?;
        let value = tape.value(logits);
        let width = value.shape()[1];
        let mut out = Vec::new();
        for (i, chunk) in target.indices.chunks(3).enumerate() {
            if chunk.len() < 3 {
                break;
            }
            let row = &value.data()[(3 * i + 2) * width..(3 * i + 2) * width + 3];
            let best = (0..3).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            let gold = Polarity::from_index(chunk[2]).expect("class token");
            out.push((gold, Polarity::from_index(best).expect("class index")));
        }
        Ok(out)
    }

    /// Copies every parameter of `other` whose name and shape match one of
    /// ours. Word embeddings are copied row by row for the words both
    /// vocabularies share. Returns the names of the copied tensors.
    pub fn init_from(&mut self, other: &AomModel) -> Vec<String> {
        let mut copied = Vec::new();
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            if id == self.encoder.word_embedding {
                let src = other.store.value(other.encoder.word_embedding);
                if src.shape()[1] != self.store.value(id).shape()[1] {
                    continue;
                }
                let d = src.shape()[1];
                let dst = self.store.value_mut(id).data_mut();
                for (row, word) in self.vocab.words().iter().enumerate() {
                    let from = other.vocab.id(word);
                    if from != 0 || row == 0 {
                        dst[row * d..(row + 1) * d].copy_from_slice(&src.data()[from * d..(from + 1) * d]);
                    }
                }
                copied.push(self.store.name(id).to_string());
                continue;
            }
            if let Some(src) = other.store.find(self.store.name(id)) {
                if other.store.value(src).shape() == self.store.value(id).shape() {
                    *self.store.value_mut(id) = other.store.value(src).clone();
                    copied.push(self.store.name(id).to_string());
                }
            }
        }
        copied
    }
}
