//! Aspect-aware attention.
//!
//! Every visual block and word `h_t` attends over the pooled candidate
//! aspects `H_CA` (`l×d`):
//!
//! ```text
//! Z_t     = tanh([W_CA·h_i^CA + b_CA ; W_H·h_t + b_H])   for each candidate i
//! α_t     = softmax_i(W_α·Z_t + b_α)
//! h_t^A   = Σ_i α_t,i · h_i^CA
//! β_t     = sigmoid(W_β·[W_1·h_t ; W_2·h_t^A] + b_β)     (one scalar per t)
//! ĥ_t     = β_t·h_t + (1 − β_t)·h_t^A
//! ```
//!
//! The `h_t` half of `Z_t` adds the same amount to every candidate's score,
//! so the softmax cancels it: `α_t` only depends on the candidates, and
//! `W_H`, `b_H` never influence the output. The gate is what makes the
//! output token-dependent. Marker rows are passed through,
//! and with no candidates the whole module is the identity.

use crate::autodiff::{ParamId, ParamStore, Rng, Tape, Var};
use crate::data::Span;
use crate::encoder::MultimodalSequence;
use crate::error::TensorError;
use crate::nn::Linear;

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
pub struct A3m {
    pub d: usize,
    pub w_ca: Linear,
    pub w_h: Linear,
    /// `2d×1`; rows `0..d` score the candidate half of `Z_t`.
    pub w_alpha: Linear,
    pub w_1: Linear,
    pub w_2: Linear,
    pub w_beta: Linear,
    pub trc_head: Linear,
}

/// Per-token attention and gate values, for inspection.
pub struct A3mOutput {
    pub h_hat: Var,
    /// `(m+n)×l` attention over candidates, `None` on the bypass path.
    pub alpha: Option<Var>,
    /// `(m+n)×1` gate values.
    pub beta: Option<Var>,
}

impl A3m {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        A3m {
            d,
            w_ca: Linear::new(store, "a3m.w_ca", d, d, rng),
            w_h: Linear::new(store, "a3m.w_h", d, d, rng),
            w_alpha: Linear::new(store, "a3m.w_alpha", 2 * d, 1, rng),
            w_1: Linear::no_bias(store, "a3m.w_1", d, d, rng),
            w_2: Linear::no_bias(store, "a3m.w_2", d, d, rng),
            w_beta: Linear::new(store, "a3m.w_beta", 2 * d, 1, rng),
            trc_head: Linear::new(store, "a3m.trc_head", d, 2, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.w_ca, &self.w_h, &self.w_alpha, &self.w_1, &self.w_2, &self.w_beta, &self.trc_head]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }

    /// Attention of each row of `h` (`T×d`) over the candidates, `T×l`.
    ///
    /// Only the candidate half of `W_α·Z_t` is evaluated: the token half and
    /// `b_α` add one constant per row, which the softmax removes exactly.
    /// Evaluating them would only add rounding noise, so `W_H`, `b_H`, the
    /// token half of `W_α` and `b_α` always receive a zero gradient.
    pub fn aspect_attention(&self, tape: &mut Tape, store: &ParamStore, h: Var, h_ca: Var) -> Result<Var> {
        let l = tape.shape(h_ca)[0];
        if l == 0 {
            return Err(TensorError::Contract("aspect attention needs at least one candidate".into()));
        }
        let t = tape.shape(h)[0];
        let cand = self.w_ca.forward(tape, store, h_ca)?;
        let cand = tape.tanh(cand);
        let w = tape.param(store, self.w_alpha.weight);
        let w_cand = tape.slice_rows(w, 0, self.d)?;
        let cand_score = tape.matmul(cand, w_cand)?; // l×1
        let cand_row = tape.transpose(cand_score)?;
        let scores = tape.repeat_rows(cand_row, t)?;
        tape.softmax(scores, 1)
    }

    /// Gate `β` (`T×1`) and blended features (`T×d`).
    pub fn gate_fuse(&self, tape: &mut Tape, store: &ParamStore, h: Var, h_a: Var) -> Result<(Var, Var)> {
        let d = tape.shape(h)[1];
        let left = self.w_1.forward(tape, store, h)?;
        let right = self.w_2.forward(tape, store, h_a)?;
        let joined = tape.concat_cols(&[left, right])?;
        let w = tape.param(store, self.w_beta.weight);
        let mut pre = tape.matmul(joined, w)?;
        if let Some(b) = self.w_beta.bias {
            let b = tape.param(store, b);
            let b = tape.reshape(b, vec![1])?;
            pre = tape.add(pre, b)?;
        }
        let beta = tape.sigmoid(pre);
        let beta_tiled = tape.repeat_cols(beta, d)?;
        // β·h + (1−β)·h_a == h_a + β·(h − h_a)
        let diff = tape.sub(h, h_a)?;
        let gated = tape.mul(beta_tiled, diff)?;
        let out = tape.add(h_a, gated)?;
        Ok((beta, out))
    }

    /// Applies attention and gating to every block and word row of `hidden`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hidden: Var,
        layout: &MultimodalSequence,
        spans: &[Span],
    ) -> Result<A3mOutput> {
        if spans.is_empty() {
            return Ok(A3mOutput { h_hat: hidden, alpha: None, beta: None });
        }
        let h_ca = pool_candidate_aspects(tape, hidden, layout, spans)?;
        let nodes = tape.gather_rows(hidden, &layout.node_rows())?;
        let alpha = self.aspect_attention(tape, store, nodes, h_ca)?;
        let h_a = aspect_context(tape, alpha, h_ca)?;
        let (beta, fused) = self.gate_fuse(tape, store, nodes, h_a)?;
        let stacked = tape.concat_rows(&[hidden, fused])?;
        let h_hat = tape.gather_rows(stacked, &layout.scatter_index())?;
        Ok(A3mOutput { h_hat, alpha: Some(alpha), beta: Some(beta) })
    }

    /// Image-text relation logits from the mean of the visual rows, `[2]`.
    pub fn trc_logits(&self, tape: &mut Tape, store: &ParamStore, h_hat: Var, layout: &MultimodalSequence) -> Result<Var> {
        let vis = layout.visual();
        if vis.is_empty() {
            return Err(TensorError::Contract("relation head needs at least one visual block".into()));
        }
        let rows = tape.slice_rows(h_hat, vis.start, vis.end)?;
        let mean = tape.mean_rows(rows)?;
        let logits = self.trc_head.forward(tape, store, mean)?;
        tape.reshape(logits, vec![2])
    }
}

/// Mean of the hidden rows covered by each span, `l×d`.
pub fn pool_candidate_aspects(tape: &mut Tape, hidden: Var, layout: &MultimodalSequence, spans: &[Span]) -> Result<Var> {
    let mut rows = Vec::with_capacity(spans.len());
    for s in spans {
        if s.start > s.end || s.end >= layout.n {
            return Err(TensorError::Index(format!(
                "span [{}, {}] outside the {} text tokens",
                s.start, s.end, layout.n
            )));
        }
        let picked = tape.slice_rows(hidden, layout.word_row(s.start), layout.word_row(s.end) + 1)?;
        rows.push(tape.mean_rows(picked)?);
    }
    tape.concat_rows(&rows)
}

/// `h_t^A = Σ_i α_t,i h_i^CA` for every row, `T×d`.
pub fn aspect_context(tape: &mut Tape, alpha: Var, h_ca: Var) -> Result<Var> {
    tape.matmul(alpha, h_ca)
}
