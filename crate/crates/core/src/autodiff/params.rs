use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::tensor::Tensor;

/// Seeded PRNG used for initialisation, shuffling and synthetic data.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Owns every trainable tensor of a model in declaration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform matrix: entries in `(-a, a)`, `a = sqrt(6 / (rows + cols))`.
    pub fn xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data).expect("shape matches"))
    }

    /// Entries uniform in `(-a, a)`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], a: f64, rng: &mut Rng) -> ParamId {
        let data = (0..shape.iter().product()).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        self.params[id.0].grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn scalar_count_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.params[id.0].value.numel()).sum()
    }

    pub fn grad_is_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }
}

/// Adam with bias correction. Moment buffers follow the store's declaration order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.params.len() {
            self.m = store.params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in store.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}
