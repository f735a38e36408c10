//! Aspect-guided graph convolution.
//!
//! Nodes are the `m` visual blocks followed by the `n` words. Word features
//! receive a projected lexicon score, edges come from a boolean dependency
//! matrix weighted by cosine similarity of the attended features, and a
//! stack of `ReLU(A·H·W + b)` layers propagates over it.

use crate::autodiff::{ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::data::{Example, Lexicon};
use crate::encoder::MultimodalSequence;
use crate::error::TensorError;
use crate::nn::Linear;

type Result<T> = std::result::Result<T, TensorError>;

/// Boolean `(m+n)×(m+n)` association over `[v_1..v_m, w_1..w_n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyMatrix {
    pub m: usize,
    pub n: usize,
    cells: Vec<bool>,
}

impl DependencyMatrix {
    pub fn size(&self) -> usize {
        self.m + self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.size() + j]
    }

    fn set(&mut self, i: usize, j: usize) {
        let s = self.size();
        self.cells[i * s + j] = true;
        self.cells[j * s + i] = true;
    }

    /// Word-word entry for tokens `i` and `j`.
    pub fn text(&self, i: usize, j: usize) -> bool {
        self.get(self.m + i, self.m + j)
    }

    pub fn to_tensor(&self) -> Tensor {
        let s = self.size();
        Tensor::new(vec![s, s], self.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .expect("square")
    }

    pub fn is_symmetric(&self) -> bool {
        let s = self.size();
        (0..s).all(|i| (0..s).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Builds the dependency matrix:
/// * word-word: self, parent, grandparent, child and grandchild;
/// * block-block: identity;
/// * word-block: the whole row is set for words inside a candidate aspect.
pub fn build_dependency_matrix(
    dep_heads: &[i64],
    aspect_word_flags: &[bool],
    m: usize,
    n: usize,
) -> Result<DependencyMatrix> {
    if dep_heads.len() != n || aspect_word_flags.len() != n {
        return Err(TensorError::Dimension(format!(
            "{} heads and {} aspect flags for {n} words",
            dep_heads.len(),
            aspect_word_flags.len()
        )));
    }
    crate::data::check_forest(dep_heads, n).map_err(TensorError::Contract)?;
    let s = m + n;
    let mut d = DependencyMatrix { m, n, cells: vec![false; s * s] };
    for i in 0..s {
        d.set(i, i);
    }
    for i in 0..n {
        let parent = dep_heads[i];
        if parent >= 0 {
            let p = parent as usize;
            d.set(m + i, m + p);
            let grand = dep_heads[p];
            if grand >= 0 {
                d.set(m + i, m + grand as usize);
            }
        }
        if aspect_word_flags[i] {
            for v in 0..m {
                d.set(m + i, v);
            }
        }
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct AgGcn {
    /// `1×d`: projects a scalar score.
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub layers: Vec<Linear>,
}

pub struct AgGcnOutput {
    pub h_hat_s: Var,
    pub dependency: DependencyMatrix,
    /// Weighted association `A`, `(m+n)×(m+n)`.
    pub association: Var,
}

impl AgGcn {
    pub fn new(store: &mut ParamStore, d: usize, n_layers: usize, rng: &mut Rng) -> Self {
        // Unit variance per component, the scale of the layer-normed
        // features the projected score is added to.
        let w_s = store.uniform("aggcn.w_s", &[1, d], 3f64.sqrt(), rng);
        let b_s = store.zeros("aggcn.b_s", &[1, d]);
        let layers = (0..n_layers).map(|i| Linear::new(store, &format!("aggcn.layer{i}"), d, d, rng)).collect();
        AgGcn { w_s, b_s, layers }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_s, self.b_s];
        ids.extend(self.layers.iter().flat_map(Linear::params));
        ids
    }

    /// `h_i + W_S·score_i + b_S` for each word row of `h_text` (`n×d`).
    pub fn inject_sentiment(&self, tape: &mut Tape, store: &ParamStore, h_text: Var, scores: &[f64]) -> Result<Var> {
        let n = tape.shape(h_text)[0];
        if scores.len() != n {
            return Err(TensorError::Dimension(format!("{} scores for {n} words", scores.len())));
        }
        let s = tape.constant(Tensor::new(vec![n, 1], scores.to_vec())?);
        let w = tape.param(store, self.w_s);
        let projected = tape.matmul(s, w)?;
        let b = tape.param(store, self.b_s);
        let b = tape.repeat_rows(b, n)?;
        let sentiment = tape.add(projected, b)?;
        tape.add(h_text, sentiment)
    }

    /// Runs every layer: `H ← ReLU(A·H·W_l + b_l)`.
    pub fn gcn_forward(&self, tape: &mut Tape, store: &ParamStore, h_s: Var, a: Var) -> Result<Var> {
        let mut h = h_s;
        for layer in &self.layers {
            let agg = tape.matmul(a, h)?;
            let lin = layer.forward(tape, store, agg)?;
            h = tape.relu(lin);
        }
        Ok(h)
    }

    /// Full module over the attended hidden state. `scores` holds one
    /// lexicon score per word.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_hat: Var,
        layout: &MultimodalSequence,
        example: &Example,
        scores: &[f64],
    ) -> Result<AgGcnOutput> {
        let (m, n) = (layout.m, layout.n);
        let nodes = tape.gather_rows(h_hat, &layout.node_rows())?;
        let text = tape.slice_rows(h_hat, layout.text().start, layout.text().end)?;
        let text_s = self.inject_sentiment(tape, store, text, scores)?;
        let h_s = if m > 0 {
            let vis = tape.slice_rows(h_hat, layout.visual().start, layout.visual().end)?;
            tape.concat_rows(&[vis, text_s])?
        } else {
            text_s
        };
        let dependency = build_dependency_matrix(&example.dep_heads, &example.aspect_word_flags(), m, n)?;
        let association = weight_matrix(tape, &dependency, nodes)?;
        let out = self.gcn_forward(tape, store, h_s, association)?;
        let stacked = tape.concat_rows(&[h_hat, out])?;
        let h_hat_s = tape.gather_rows(stacked, &layout.scatter_index())?;
        Ok(AgGcnOutput { h_hat_s, dependency, association })
    }
}

/// Lexicon score for every token.
pub fn lexicon_scores(tokens: &[String], lexicon: &Lexicon) -> Vec<f64> {
    tokens.iter().map(|t| lexicon.score(t)).collect()
}

/// `A_ij = D_ij · cos(ĥ_i, ĥ_j)` over the node rows.
pub fn weight_matrix(tape: &mut Tape, dependency: &DependencyMatrix, nodes: Var) -> Result<Var> {
    let cos = tape.cosine_rows(nodes)?;
    let mask = tape.constant(dependency.to_tensor());
    tape.mul(cos, mask)
}
