//! Shared layers built on the tape: affine maps, layer norm, multi-head
//! attention and the position-wise feed-forward block.

use crate::autodiff::{ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// `y = x·W + b` with `W` stored as `in×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let weight = store.xavier(format!("{name}.weight"), d_in, d_out, rng);
        let bias = Some(store.zeros(format!("{name}.bias"), &[1, d_out]));
        Linear { weight, bias }
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let weight = store.xavier(format!("{name}.weight"), d_in, d_out, rng);
        Linear { weight, bias: None }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let rows = tape.shape(y)[0];
                let bv = tape.param(store, b);
                let tiled = tape.repeat_rows(bv, rows)?;
                tape.add(y, tiled)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Row-wise layer norm with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm { gain: store.ones(format!("{name}.gain"), &[1, d]), bias: store.zeros(format!("{name}.bias"), &[1, d]) }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let rows = tape.shape(x)[0];
        let normed = tape.layer_norm(x, LN_EPS)?;
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let g = tape.repeat_rows(g, rows)?;
        let b = tape.repeat_rows(b, rows)?;
        let scaled = tape.mul(normed, g)?;
        tape.add(scaled, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

/// Attention output plus the per-head probability matrices (`T×S` each).
pub struct AttentionOutput {
    pub output: Var,
    pub heads: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut Rng) -> Self {
        MultiHeadAttention {
            n_heads,
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::no_bias(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
        }
    }

    /// Scaled dot-product attention of `query` rows over `memory` rows. Keys
    /// carry no bias: it would shift every score in a row equally.
    /// `mask`, when given, is added to the `T×S` scores before the softmax.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        memory: Var,
        mask: Option<Var>,
    ) -> Result<AttentionOutput> {
        let d = tape.shape(query)[1];
        let dh = d / self.n_heads;
        let q = self.q.forward(tape, store, query)?;
        let k = self.k.forward(tape, store, memory)?;
        let v = self.v.forward(tape, store, memory)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.n_heads);
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh)?;
            let raw = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(raw, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let probs = tape.softmax(scores, 1)?;
            outs.push(tape.matmul(probs, vh)?);
            heads.push(probs);
        }
        let joined = tape.concat_cols(&outs)?;
        let output = self.out.forward(tape, store, joined)?;
        Ok(AttentionOutput { output, heads })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out].iter().flat_map(|l| l.params()).collect()
    }
}

/// Additive causal mask: 0 on and below the diagonal, a large negative above.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = -1e30;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, d_ff, rng),
            down: Linear::new(store, &format!("{name}.down"), d_ff, d, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.up.params().into_iter().chain(self.down.params()).collect()
    }
}
