//! Pointer decoder.
//!
//! The two encoder streams are mixed as `H̃ = λ1·Ĥ + λ2·Ĥ^S`. The output
//! vocabulary is the four class tokens followed by one entry per word; its
//! embedding table is `[C_d ; (W + H̃_T)/2]` where `W` holds the words'
//! input embeddings. Each step scores that table against the decoder state.

use crate::autodiff::{softmax_slice, ParamId, ParamStore, Rng, Tape, Var};
use crate::data::{position_token, token_position, EOS, NUM_CLASS_TOKENS};
use crate::error::TensorError;
use crate::nn::{causal_mask, FeedForward, LayerNorm, MultiHeadAttention};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub constrained_decoding: bool,
    pub max_decode_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            lambda1: 1.0,
            lambda2: 0.5,
            constrained_decoding: true,
            max_decode_len: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    /// `C_d`: embeddings of `[positive, neutral, negative, <eos>]`.
    pub class_embedding: ParamId,
    /// Learned first decoder input.
    pub start: ParamId,
    pub position_embedding: ParamId,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
}

/// `H̃ = λ1·Ĥ + λ2·Ĥ^S`; without a second stream only the first term remains.
pub fn combine_streams(tape: &mut Tape, h_hat: Var, h_hat_s: Option<Var>, lambda1: f64, lambda2: f64) -> Result<Var> {
    let first = tape.scale(h_hat, lambda1);
    match h_hat_s {
        Some(s) => {
            let second = tape.scale(s, lambda2);
            tape.add(first, second)
        }
        None => Ok(first),
    }
}

/// Output-token table `[C_d ; (W + H̃_T)/2]`, `(4+n)×d`.
pub fn pointer_table(tape: &mut Tape, h_tilde_text: Var, word_embeddings: Var, class_embeddings: Var) -> Result<Var> {
    let sum = tape.add(word_embeddings, h_tilde_text)?;
    let avg = tape.scale(sum, 0.5);
    tape.concat_rows(&[class_embeddings, avg])
}

/// Logits `[C_d ; H̄_T]·h` for each state row: `T×(4+n)`.
pub fn pointer_logits(tape: &mut Tape, states: Var, table: Var) -> Result<Var> {
    let t = tape.transpose(table)?;
    tape.matmul(states, t)
}

impl Decoder {
    pub fn new(store: &mut ParamStore, config: DecoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.n_heads == 0 || !config.d_model.is_multiple_of(config.n_heads) {
            return Err(TensorError::Contract(format!(
                "d_model {} is not divisible by n_heads {}",
                config.d_model, config.n_heads
            )));
        }
        let d = config.d_model;
        let class_embedding = store.xavier("decoder.class_embedding", NUM_CLASS_TOKENS, d, rng);
        let start = store.xavier("decoder.start", 1, d, rng);
        let position_embedding = store.xavier("decoder.position_embedding", config.max_decode_len.max(1), d, rng);
        let layers = (0..config.n_layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                DecoderLayer {
                    ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d),
                    self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, config.n_heads, rng),
                    ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), d),
                    cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, config.n_heads, rng),
                    ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{name}.ff"), d, config.d_ff, rng),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(store, "decoder.final_norm", d);
        Ok(Decoder { config, class_embedding, start, position_embedding, layers, final_norm })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.class_embedding, self.start, self.position_embedding];
        for l in &self.layers {
            ids.extend(l.ln_self.params());
            ids.extend(l.self_attn.params());
            ids.extend(l.ln_cross.params());
            ids.extend(l.cross_attn.params());
            ids.extend(l.ln_ff.params());
            ids.extend(l.ff.params());
        }
        ids.extend(self.final_norm.params());
        ids
    }

    /// Decoder inputs for the prefix `[<start>, y_1, …, y_k]`: class tokens
    /// use `C_d` rows, pointers reuse the table rows of their words.
    pub fn input_embeddings(&self, tape: &mut Tape, store: &ParamStore, table: Var, prefix: &[usize]) -> Result<Var> {
        let vocab = tape.shape(table)[0];
        if let Some(bad) = prefix.iter().find(|&&y| y >= vocab) {
            return Err(TensorError::Index(format!("token {bad} outside pointer vocabulary of {vocab}")));
        }
        let start = tape.param(store, self.start);
        let stacked = tape.concat_rows(&[start, table])?;
        let idx: Vec<usize> = std::iter::once(0).chain(prefix.iter().map(|y| y + 1)).collect();
        tape.gather_rows(stacked, &idx)
    }

    /// Decoder states for every input row (causal self-attention, cross
    /// attention over `memory`), `T×d`.
    pub fn states(&self, tape: &mut Tape, store: &ParamStore, memory: Var, inputs: Var) -> Result<Var> {
        let t = tape.shape(inputs)[0];
        if t == 0 {
            return Err(TensorError::Contract("decoder needs at least the start input".into()));
        }
        if t > self.config.max_decode_len {
            return Err(TensorError::Contract(format!(
                "decoder input of {t} rows exceeds max_decode_len {}",
                self.config.max_decode_len
            )));
        }
        let pos_table = tape.param(store, self.position_embedding);
        let pos = tape.slice_rows(pos_table, 0, t)?;
        let mut h = tape.add(inputs, pos)?;
        let mask = tape.constant(causal_mask(t));
        for layer in &self.layers {
            let normed = layer.ln_self.forward(tape, store, h)?;
            let sa = layer.self_attn.forward(tape, store, normed, normed, Some(mask))?;
            h = tape.add(h, sa.output)?;
            let normed = layer.ln_cross.forward(tape, store, h)?;
            let ca = layer.cross_attn.forward(tape, store, normed, memory, None)?;
            h = tape.add(h, ca.output)?;
            let normed = layer.ln_ff.forward(tape, store, h)?;
            let ff = layer.ff.forward(tape, store, normed)?;
            h = tape.add(h, ff)?;
        }
        self.final_norm.forward(tape, store, h)
    }

    /// `h_t^d`: the state at the last input row, shape `[d]`.
    pub fn decode_step(&self, tape: &mut Tape, store: &ParamStore, memory: Var, inputs: Var) -> Result<Var> {
        let states = self.states(tape, store, memory, inputs)?;
        let t = tape.shape(states)[0];
        let last = tape.slice_rows(states, t - 1, t)?;
        let d = tape.shape(last)[1];
        tape.reshape(last, vec![d])
    }

    /// Summed teacher-forced cross-entropy of `target` (which ends in EOS).
    pub fn sequence_loss(&self, tape: &mut Tape, store: &ParamStore, memory: Var, table: Var, target: &[usize]) -> Result<Var> {
        let logits = self.teacher_forced_logits(tape, store, memory, table, target)?;
        let mut total: Option<Var> = None;
        for (i, &y) in target.iter().enumerate() {
            let row = tape.slice_rows(logits, i, i + 1)?;
            let v = tape.shape(row)[1];
            let row = tape.reshape(row, vec![v])?;
            let ce = tape.cross_entropy(row, y)?;
            total = Some(match total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
        }
        total.ok_or_else(|| TensorError::Contract("empty target sequence".into()))
    }

    /// Logits predicting each target token from its gold prefix, `T×(4+n)`.
    pub fn teacher_forced_logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: Var,
        table: Var,
        target: &[usize],
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(TensorError::Contract("empty target sequence".into()));
        }
        let inputs = self.input_embeddings(tape, store, table, &target[..target.len() - 1])?;
        let states = self.states(tape, store, memory, inputs)?;
        pointer_logits(tape, states, table)
    }

    /// Greedy decoding. With `constrained_decoding` a grammar mask only
    /// admits `(start, end ≥ start, sentiment)* EOS`; either way the output
    /// ends in EOS by `max_decode_len` tokens.
    pub fn generate(&self, tape: &mut Tape, store: &ParamStore, memory: Var, table: Var) -> Result<Vec<usize>> {
        let vocab = tape.shape(table)[0];
        let max_len = self.config.max_decode_len;
        let mut out: Vec<usize> = Vec::new();
        while out.len() < max_len {
            if out.len() + 1 == max_len {
                out.push(EOS);
                break;
            }
            let inputs = self.input_embeddings(tape, store, table, &out)?;
            let state = self.decode_step(tape, store, memory, inputs)?;
            let d = tape.shape(state)[0];
            let state = tape.reshape(state, vec![1, d])?;
            let logits = pointer_logits(tape, state, table)?;
            let logits = tape.value(logits).data().to_vec();
            let next = if self.config.constrained_decoding {
                let allowed = allowed_next(&out, vocab, max_len);
                argmax_masked(&logits, &allowed)
            } else {
                argmax_masked(&logits, &vec![true; vocab])
            };
            out.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(out)
    }
}

/// Tokens the grammar admits after `prefix`, for a vocabulary of `4+n`.
pub fn allowed_next(prefix: &[usize], vocab: usize, max_len: usize) -> Vec<bool> {
    let mut allowed = vec![false; vocab];
    let t = prefix.len();
    match t % 3 {
        0 => {
            allowed[EOS] = true;
            // A full triple still needs three slots plus the closing EOS.
            if t + 4 <= max_len {
                allowed[NUM_CLASS_TOKENS..].iter_mut().for_each(|a| *a = true);
            }
        }
        1 => {
            let start = token_position(prefix[t - 1]).unwrap_or(0);
            allowed[position_token(start)..].iter_mut().for_each(|a| *a = true);
        }
        _ => allowed[..3].iter_mut().for_each(|a| *a = true),
    }
    allowed
}

/// Next-token distribution with disallowed logits set to −∞ first.
pub fn masked_distribution(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let masked: Vec<f64> =
        logits.iter().zip(allowed).map(|(&l, &ok)| if ok { l } else { f64::NEG_INFINITY }).collect();
    softmax_slice(&masked)
}

fn argmax_masked(logits: &[f64], allowed: &[bool]) -> usize {
    let mut best = None;
    for (i, (&l, &ok)) in logits.iter().zip(allowed).enumerate() {
        if ok && best.is_none_or(|(_, b)| l > b) {
            best = Some((i, l));
        }
    }
    best.map_or(EOS, |(i, _)| i)
}
