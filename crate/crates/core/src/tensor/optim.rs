//! AdamW, Muon and the warmup-cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{kernels, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Muon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Momentum of the Muon buffer (Nesterov form).
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::AdamW, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1, momentum: 0.95 }
    }
}

/// Optimizer state. `first` holds Adam first moments or the Muon momentum
/// buffer, `second` the Adam second moments; both mirror the parameter
/// shapes.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

/// Whether Muon handles this parameter: weight matrices only. Vectors and
/// embedding tables (marked without decay) go through AdamW.
fn uses_muon(kind: OptimizerKind, shape: &[usize], decay: bool) -> bool {
    kind == OptimizerKind::Muon && shape.len() == 2 && decay
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    /// Applies one update with learning rate `lr` using the gradients
    /// stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - Float::powi(c.beta1, t);
        let bc2 = 1.0 - Float::powi(c.beta2, t);
        for (i, p) in store.iter_mut().enumerate() {
            if uses_muon(c.kind, p.value.shape(), p.decay) {
                let (rows, cols) = (p.value.shape()[0], p.value.shape()[1]);
                let buf = self.first[i].data_mut();
                let mut update = vec![T::zero(); buf.len()];
                let mu = T::from_f64(c.momentum);
                for ((b, u), &g) in buf.iter_mut().zip(&mut update).zip(p.grad.data()) {
                    *b = mu * *b + g;
                    *u = g + mu * *b;
                }
                let ortho = newton_schulz(&update, rows, cols, 5);
                // Match the update RMS of AdamW so the same lr and decay apply.
                let scale = 0.2 * Float::sqrt(rows.max(cols) as f64);
                for (w, &o) in p.value.data_mut().iter_mut().zip(&ortho) {
                    let wv = w.as_f64();
                    *w = T::from_f64(wv - lr * (scale * o.as_f64() + c.weight_decay * wv));
                }
            } else {
                let wd = if p.decay { c.weight_decay } else { 0.0 };
                let m = self.first[i].data_mut();
                let v = self.second[i].data_mut();
                for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                    let g = g.as_f64();
                    let mn = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * g;
                    let vn = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * g * g;
                    *mi = T::from_f64(mn);
                    *vi = T::from_f64(vn);
                    let adam = (mn / bc1) / (Float::sqrt(vn / bc2) + c.eps);
                    let wv = w.as_f64();
                    *w = T::from_f64(wv - lr * (adam + wd * wv));
                }
            }
        }
    }
}

/// Approximate orthogonalization `U Vᵀ` of a `rows x cols` matrix by the
/// quintic Newton–Schulz iteration. Singular values land near 1 (within
/// roughly 0.3), not exactly on it.
pub fn newton_schulz<T: Scalar>(g: &[T], rows: usize, cols: usize, iterations: usize) -> Vec<T> {
    let (a, b, c) = (3.4445, -4.7750, 2.0315);
    let norm = Float::sqrt(g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>()) + 1e-7;
    let tall = rows > cols;
    let (r, n) = if tall { (cols, rows) } else { (rows, cols) };
    let mut x: Vec<f64> = g.iter().map(|v| v.as_f64() / norm).collect();
    if tall {
        x = kernels::transpose(&x, rows, cols);
    }
    let mut gram = vec![0.0; r * r];
    let mut gram2 = vec![0.0; r * r];
    let mut poly = vec![0.0; r * r];
    let mut next = vec![0.0; r * n];
    for _ in 0..iterations {
        let xt = kernels::transpose(&x, r, n);
        kernels::gemm(&x, &xt, &mut gram, r, n, r, false);
        kernels::gemm(&gram, &gram, &mut gram2, r, r, r, false);
        for ((p, &g1), &g2) in poly.iter_mut().zip(&gram).zip(&gram2) {
            *p = b * g1 + c * g2;
        }
        kernels::gemm(&poly, &x, &mut next, r, r, n, false);
        for (nx, &xv) in next.iter_mut().zip(&x) {
            *nx += a * xv;
        }
        core::mem::swap(&mut x, &mut next);
    }
    if tall {
        x = kernels::transpose(&x, r, n);
    }
    x.into_iter().map(T::from_f64).collect()
}

/// Linear warmup over the first `warmup_frac` of `total` steps, then cosine
/// decay towards zero. `step` counts from 0.
pub fn learning_rate(peak: f64, step: u64, total: u64, warmup_frac: f64) -> f64 {
    let total = total.max(1);
    let warmup = ((warmup_frac * total as f64).ceil() as u64).min(total);
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * peak * (1.0 + Float::cos(core::f64::consts::PI * progress))
}
