//! Multimodal encoder: visual blocks and words are embedded, wrapped in
//! marker tokens, concatenated and passed through a small pre-norm
//! transformer stack.
//!
//! This is a trainable stand-in for a pretrained sequence-to-sequence
//! encoder. The modules downstream only rely on the hidden-state layout.

use std::ops::Range;

use crate::autodiff::{ParamId, ParamStore, Rng, Tape, Var};
use crate::data::{Example, Vocab};
use crate::error::TensorError;
use crate::nn::{FeedForward, LayerNorm, MultiHeadAttention};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dv: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d_model: 32, n_layers: 2, n_heads: 4, d_ff: 64, max_len: 64, dv: 8 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(TensorError::Contract(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Marker rows in the special-embedding table.
pub const IMG_OPEN: usize = 0;
pub const IMG_CLOSE: usize = 1;
pub const BOS: usize = 2;
pub const TEXT_EOS: usize = 3;

/// Row layout `[<img>, v_1..v_m, </img>, <bos>, w_1..w_n, <eos>]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalSequence {
    pub m: usize,
    pub n: usize,
}

impl MultimodalSequence {
    pub fn new(m: usize, n: usize) -> Self {
        MultimodalSequence { m, n }
    }

    pub fn len(&self) -> usize {
        self.m + self.n + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn visual(&self) -> Range<usize> {
        1..1 + self.m
    }

    pub fn text(&self) -> Range<usize> {
        self.m + 3..self.m + 3 + self.n
    }

    /// Row of text token `j`.
    pub fn word_row(&self, j: usize) -> usize {
        self.m + 3 + j
    }

    pub fn markers(&self) -> [usize; 4] {
        [0, self.m + 1, self.m + 2, self.m + self.n + 3]
    }

    /// Visual rows followed by text rows: the graph nodes `[v_1..v_m, w_1..w_n]`.
    pub fn node_rows(&self) -> Vec<usize> {
        self.visual().chain(self.text()).collect()
    }

    /// Index map that writes `node` outputs back into the full layout:
    /// gathering it from `concat_rows([full, nodes])` replaces node rows
    /// and keeps marker rows.
    pub fn scatter_index(&self) -> Vec<usize> {
        let len = self.len();
        let mut idx: Vec<usize> = (0..len).collect();
        for (k, row) in self.node_rows().into_iter().enumerate() {
            idx[row] = len + k;
        }
        idx
    }

    /// Printable label for each row.
    pub fn labels(&self, tokens: &[String]) -> Vec<String> {
        let mut out = vec!["<img>".to_string()];
        out.extend((0..self.m).map(|i| format!("<block{i}>")));
        out.extend(["</img>".to_string(), "<bos>".to_string()]);
        out.extend(tokens.iter().cloned());
        out.push("<eos>".into());
        out
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

/// Output of [`Encoder::encode`].
pub struct Encoded {
    pub hidden: Var,
    /// Attention probabilities per layer, per head.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub visual_proj: crate::nn::Linear,
    pub word_embedding: ParamId,
    pub special_embedding: ParamId,
    pub position_embedding: ParamId,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, vocab_size: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let visual_proj = crate::nn::Linear::new(store, "encoder.visual_proj", config.dv, d, rng);
        let word_embedding = store.xavier("encoder.word_embedding", vocab_size, d, rng);
        let special_embedding = store.xavier("encoder.special_embedding", 4, d, rng);
        let position_embedding = store.xavier("encoder.position_embedding", config.max_len, d, rng);
        let layers = (0..config.n_layers)
            .map(|i| {
                let name = format!("encoder.layer{i}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
                    attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, config.n_heads, rng),
                    ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{name}.ff"), d, config.d_ff, rng),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(store, "encoder.final_norm", d);
        Ok(Encoder { config, visual_proj, word_embedding, special_embedding, position_embedding, layers, final_norm })
    }

    /// Projects raw `m×dv` block features to `m×d_model`.
    pub fn project_visual(&self, tape: &mut Tape, store: &ParamStore, example: &Example) -> Result<Var> {
        let feats = crate::autodiff::Tensor::from_rows(&example.visual_features)?;
        if feats.dims2()?.1 != self.config.dv {
            return Err(TensorError::Dimension(format!(
                "example {:?} has visual width {}, encoder expects {}",
                example.id,
                feats.dims2()?.1,
                self.config.dv
            )));
        }
        let v = tape.constant(feats);
        self.visual_proj.forward(tape, store, v)
    }

    /// Embedding rows of the example's words (no positions), `n×d`.
    pub fn word_rows(&self, tape: &mut Tape, store: &ParamStore, example: &Example, vocab: &Vocab) -> Result<Var> {
        let ids: Vec<usize> = example.tokens.iter().map(|w| vocab.id(w)).collect();
        let table = tape.param(store, self.word_embedding);
        tape.gather_rows(table, &ids)
    }

    /// Builds `X`: the concatenated marker, block and word embeddings plus
    /// learned positions, `(m+n+4)×d`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, example: &Example, vocab: &Vocab) -> Result<Var> {
        let layout = MultimodalSequence::new(example.m(), example.n());
        if layout.len() > self.config.max_len {
            return Err(TensorError::Contract(format!(
                "sequence of {} rows exceeds max_len {}",
                layout.len(),
                self.config.max_len
            )));
        }
        let special = tape.param(store, self.special_embedding);
        let open = tape.gather_rows(special, &[IMG_OPEN])?;
        let close_bos = tape.gather_rows(special, &[IMG_CLOSE, BOS])?;
        let eos = tape.gather_rows(special, &[TEXT_EOS])?;
        let words = self.word_rows(tape, store, example, vocab)?;
        let mut parts = vec![open];
        if example.m() > 0 {
            parts.push(self.project_visual(tape, store, example)?);
        }
        parts.extend([close_bos, words, eos]);
        let tokens = tape.concat_rows(&parts)?;
        let pos_table = tape.param(store, self.position_embedding);
        let pos = tape.slice_rows(pos_table, 0, layout.len())?;
        tape.add(tokens, pos)
    }

    /// Runs the transformer stack over `x`; output has the same shape.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Encoded> {
        let mut h = x;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let normed = layer.ln_attn.forward(tape, store, h)?;
            let att = layer.attn.forward(tape, store, normed, normed, None)?;
            h = tape.add(h, att.output)?;
            let normed = layer.ln_ff.forward(tape, store, h)?;
            let ff = layer.ff.forward(tape, store, normed)?;
            h = tape.add(h, ff)?;
            attention.push(att.heads);
        }
        let hidden = self.final_norm.forward(tape, store, h)?;
        Ok(Encoded { hidden, attention })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.visual_proj.params();
        ids.extend([self.word_embedding, self.special_embedding, self.position_embedding]);
        for l in &self.layers {
            ids.extend(l.ln_attn.params());
            ids.extend(l.attn.params());
            ids.extend(l.ln_ff.params());
            ids.extend(l.ff.params());
        }
        ids.extend(self.final_norm.params());
        ids
    }
}
