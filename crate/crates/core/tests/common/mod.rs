//! Scalar-loop reference implementations and random instance generators
//! shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use aom::autodiff::{seeded_rng, ParamStore, Rng, Tensor};
use rand::Rng as _;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn to_mat(t: &Tensor) -> Mat {
    t.rows()
}

/// Overwrites every parameter, biases included, with uniform(-1, 1) draws.
pub fn randomize(store: &mut ParamStore, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| {
            assert_eq!(r.len(), s.len(), "column count");
            r.iter().zip(s).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

/// `x·W (+ b)` for a single row, `W` given as an `in×out` tensor.
pub fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w.data()[i * cols + j];
        }
        *o = acc + b.map_or(0.0, |b| b.data()[j]);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in x {
        if v > m {
            m = v;
        }
    }
    let mut e = Vec::with_capacity(x.len());
    let mut s = 0.0;
    for &v in x {
        let ev = (v - m).exp();
        e.push(ev);
        s += ev;
    }
    e.iter().map(|v| v / s).collect()
}

pub struct A3mWeights<'a> {
    pub w_ca: &'a Tensor,
    pub b_ca: &'a Tensor,
    pub w_h: &'a Tensor,
    pub b_h: &'a Tensor,
    pub w_alpha: &'a Tensor,
    pub b_alpha: &'a Tensor,
    pub w_1: &'a Tensor,
    pub w_2: &'a Tensor,
    pub w_beta: &'a Tensor,
    pub b_beta: &'a Tensor,
}

impl<'a> A3mWeights<'a> {
    pub fn of(a: &aom::a3m::A3m, store: &'a ParamStore) -> Self {
        A3mWeights {
            w_ca: store.value(a.w_ca.weight),
            b_ca: store.value(a.w_ca.bias.unwrap()),
            w_h: store.value(a.w_h.weight),
            b_h: store.value(a.w_h.bias.unwrap()),
            w_alpha: store.value(a.w_alpha.weight),
            b_alpha: store.value(a.w_alpha.bias.unwrap()),
            w_1: store.value(a.w_1.weight),
            w_2: store.value(a.w_2.weight),
            w_beta: store.value(a.w_beta.weight),
            b_beta: store.value(a.w_beta.bias.unwrap()),
        }
    }
}

/// Direct formula: `Z_t = tanh([W_CA h_i + b_CA ; W_H h_t + b_H])` with the
/// token half repeated for every candidate, then `softmax(W_α Z_t + b_α)`.
pub fn aspect_attention(h: &Mat, h_ca: &Mat, w: &A3mWeights) -> Mat {
    let mut out = Vec::new();
    for ht in h {
        let tok: Vec<f64> = affine(ht, w.w_h, Some(w.b_h)).iter().map(|v| v.tanh()).collect();
        let mut scores = Vec::new();
        for hc in h_ca {
            let cand: Vec<f64> = affine(hc, w.w_ca, Some(w.b_ca)).iter().map(|v| v.tanh()).collect();
            let z: Vec<f64> = cand.into_iter().chain(tok.iter().copied()).collect();
            scores.push(affine(&z, w.w_alpha, Some(w.b_alpha))[0]);
        }
        out.push(softmax(&scores));
    }
    out
}

pub fn aspect_context(alpha: &Mat, h_ca: &Mat) -> Mat {
    let d = h_ca[0].len();
    alpha
        .iter()
        .map(|a| {
            let mut row = vec![0.0; d];
            for (i, ai) in a.iter().enumerate() {
                for k in 0..d {
                    row[k] += ai * h_ca[i][k];
                }
            }
            row
        })
        .collect()
}

/// Returns `(β, fused)`.
pub fn gate_fuse(h: &Mat, h_a: &Mat, w: &A3mWeights) -> (Vec<f64>, Mat) {
    let mut betas = Vec::new();
    let mut fused = Vec::new();
    for (ht, at) in h.iter().zip(h_a) {
        let joined: Vec<f64> = affine(ht, w.w_1, None).into_iter().chain(affine(at, w.w_2, None)).collect();
        let beta = sigmoid(affine(&joined, w.w_beta, Some(w.b_beta))[0]);
        betas.push(beta);
        fused.push(ht.iter().zip(at).map(|(x, y)| beta * x + (1.0 - beta) * y).collect());
    }
    (betas, fused)
}

pub fn inject_sentiment(h: &Mat, scores: &[f64], w_s: &Tensor, b_s: &Tensor) -> Mat {
    h.iter()
        .zip(scores)
        .map(|(row, s)| row.iter().enumerate().map(|(k, x)| x + w_s.data()[k] * s + b_s.data()[k]).collect())
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt() + 1e-12)
}

pub fn weight_matrix(d: &[Vec<bool>], nodes: &Mat) -> Mat {
    let s = nodes.len();
    (0..s)
        .map(|i| (0..s).map(|j| if d[i][j] { cosine(&nodes[i], &nodes[j]) } else { 0.0 }).collect())
        .collect()
}

/// `H ← ReLU(Σ_j A_ij h_j W_l + b_l)` for each `(W_l, b_l)`.
pub fn gcn_forward(h: &Mat, a: &Mat, layers: &[(&Tensor, &Tensor)]) -> Mat {
    let mut cur = h.clone();
    for (w, b) in layers {
        let d = cur[0].len();
        let mut next = Vec::new();
        for ai in a {
            let mut agg = vec![0.0; d];
            for (j, aij) in ai.iter().enumerate() {
                for k in 0..d {
                    agg[k] += aij * cur[j][k];
                }
            }
            next.push(affine(&agg, w, Some(b)).into_iter().map(|v| v.max(0.0)).collect());
        }
        cur = next;
    }
    cur
}

/// `[C_d ; (W + H̃_T)/2] · h` for each state row.
pub fn pointer_logits(states: &Mat, h_text: &Mat, words: &Mat, classes: &Mat) -> Mat {
    let mut table: Mat = classes.clone();
    for (h, w) in h_text.iter().zip(words) {
        table.push(h.iter().zip(w).map(|(x, y)| (y + x) / 2.0).collect());
    }
    states
        .iter()
        .map(|s| table.iter().map(|row| row.iter().zip(s).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

/// Random dependency forest over `n` words: each word either is a root or
/// hangs under a word that appears earlier in a random order.
pub fn random_forest(n: usize, rng: &mut Rng) -> Vec<i64> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut heads = vec![-1i64; n];
    for (k, &node) in order.iter().enumerate() {
        if k > 0 && rng.gen_bool(0.85) {
            heads[node] = order[rng.gen_range(0..k)] as i64;
        }
    }
    heads
}

/// Words reachable by at most two steps purely upward or purely downward,
/// found by breadth-first search over the parent and child relations.
pub fn within_two_generations(heads: &[i64]) -> Vec<Vec<bool>> {
    let n = heads.len();
    let mut children = vec![Vec::new(); n];
    for (i, &h) in heads.iter().enumerate() {
        if h >= 0 {
            children[h as usize].push(i);
        }
    }
    let mut rel = vec![vec![false; n]; n];
    for start in 0..n {
        rel[start][start] = true;
        let mut frontier = vec![start];
        for _ in 0..2 {
            let mut next = Vec::new();
            for &u in &frontier {
                next.extend(children[u].iter().copied());
            }
            for &v in &next {
                rel[start][v] = true;
            }
            frontier = next;
        }
        let mut up = start;
        for _ in 0..2 {
            match heads[up] {
                h if h >= 0 => {
                    up = h as usize;
                    rel[start][up] = true;
                }
                _ => break,
            }
        }
    }
    rel
}

/// Full `(m+n)×(m+n)` reference matrix.
pub fn dependency_oracle(heads: &[i64], aspect: &[bool], m: usize) -> Vec<Vec<bool>> {
    let n = heads.len();
    let tt = within_two_generations(heads);
    let s = m + n;
    let mut d = vec![vec![false; s]; s];
    for v in 0..m {
        d[v][v] = true;
    }
    for i in 0..n {
        for j in 0..n {
            d[m + i][m + j] = tt[i][j];
        }
        if aspect[i] {
            for v in 0..m {
                d[m + i][v] = true;
                d[v][m + i] = true;
            }
        }
    }
    d
}

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}
