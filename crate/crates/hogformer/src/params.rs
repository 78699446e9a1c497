//! Named parameter registration and deterministic initialization.

use crate::tensor::{numel, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds the model's parameter tree: every learnable tensor is registered
/// under a dotted path so the optimizer, checkpoints and diagnostics agree on
/// one ordering.
pub struct ParamReg<T: Scalar> {
    prefix: Vec<String>,
    rng: ChaCha8Rng,
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamReg<T> {
    pub fn new(seed: u64) -> Self {
        ParamReg {
            prefix: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    pub fn push_scope(&mut self, name: &str) {
        self.prefix.push(name.to_string());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.push_scope(name);
        let r = f(self);
        self.pop_scope();
        r
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix.join("."))
        }
    }

    fn register(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        let t = Tensor::new(shape, data, true);
        self.entries.push((self.full_name(name), t.clone()));
        t
    }

    /// Truncated-normal weight, std = min(0.02, sqrt(2/fan_in)), resampled
    /// beyond two standard deviations.
    pub fn trunc_normal(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let std = 0.02f64.min((2.0 / fan_in.max(1) as f64).sqrt());
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let (u1, u2): (f64, f64) = (self.rng.gen_range(f64::MIN_POSITIVE..1.0), self.rng.gen());
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            if z.abs() <= 2.0 {
                data.push(T::from_f64(z * std));
            }
        }
        self.register(name, shape, data)
    }

    /// Convolution weight (O, I, k, k); fan-in is I·k².
    pub fn conv_weight(&mut self, name: &str, o: usize, i: usize, k: usize) -> Tensor<T> {
        self.trunc_normal(name, vec![o, i, k, k], i * k * k)
    }

    /// Linear projection weight (in, out) for matmul, fan-in = in.
    pub fn linear_weight(&mut self, name: &str, rows: usize, cols: usize) -> Tensor<T> {
        self.trunc_normal(name, vec![rows, cols], rows)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Tensor<T> {
        let n = numel(&shape);
        self.register(name, shape, vec![T::zero(); n])
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> Tensor<T> {
        let n = numel(&shape);
        self.register(name, shape, vec![T::one(); n])
    }

    pub fn param_count(&self) -> u64 {
        self.entries.iter().map(|(_, t)| t.numel() as u64).sum()
    }
}
