//! Central finite-difference checks of tape gradients (64-bit only).

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample;
use rand::Rng as _;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    Float::sqrt(diff) / Float::sqrt(na).max(Float::sqrt(nn)).max(1e-12)
}

/// Reduces a tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct amount to the checked loss.
pub fn weighted_sum(tape: &mut Tape<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let mut r = rng::from_seed(seed);
    let shape = tape.shape(x).to_vec();
    let w = Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0));
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

/// Checks the gradient of `f` with respect to each input tensor. Returns one
/// relative error per input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    check_inputs_inner(None, inputs, eps, f)
}

/// Like [`check_inputs`], with `store` available to `f` as fixed
/// parameters.
pub fn check_inputs_with_params<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    check_inputs_inner(Some(store), inputs, eps, f)
}

fn check_inputs_inner<F>(store: Option<&ParamStore<f64>>, inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let new_tape = || match store {
        Some(s) => Tape::with_params(s),
        None => Tape::new(),
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = new_tape();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(v) {
            Some(g) => g.data().to_vec(),
            None => alloc::vec![0.0; inputs[i].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub relative_error: f64,
    pub checked: usize,
    pub total: usize,
}

/// Checks parameter gradients of `loss` on `fraction` of all parameter
/// entries (at least one), chosen by `seed`. The analytic gradients are
/// computed on a fresh tape; `store` gradients are left untouched.
pub fn check_params<F>(store: &mut ParamStore<f64>, fraction: f64, seed: u64, eps: f64, loss: F) -> Result<ParamCheck>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic_all: Vec<Tensor<f64>> = {
        let mut tape = Tape::with_params(store);
        let out = loss(&mut tape)?;
        let grads = tape.backward(out)?;
        let mut all: Vec<Tensor<f64>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        for (id, g) in grads.params() {
            all[id.index()] = g.clone();
        }
        all
    };
    // Flat index -> (param, element).
    let mut locations = Vec::new();
    for (id, p) in store.iter() {
        for j in 0..p.value.numel() {
            locations.push((id, j));
        }
    }
    let total = locations.len();
    let count = ((fraction * total as f64).ceil() as usize).clamp(1, total.max(1));
    let mut r = rng::from_seed(seed);
    let mut picks: Vec<usize> = sample(&mut r, total, count).into_vec();
    picks.sort_unstable();

    let mut analytic = Vec::with_capacity(count);
    let mut numeric = Vec::with_capacity(count);
    for &k in &picks {
        let (id, j) = locations[k];
        let orig = store.get(id).value.data()[j];
        store.get_mut(id).value.data_mut()[j] = orig + eps;
        let plus = {
            let mut tape = Tape::with_params(store);
            let out = loss(&mut tape)?;
            tape.value(out).item()?
        };
        store.get_mut(id).value.data_mut()[j] = orig - eps;
        let minus = {
            let mut tape = Tape::with_params(store);
            let out = loss(&mut tape)?;
            tape.value(out).item()?
        };
        store.get_mut(id).value.data_mut()[j] = orig;
        analytic.push(analytic_all[id.index()].data()[j]);
        numeric.push((plus - minus) / (2.0 * eps));
    }
    Ok(ParamCheck { relative_error: relative_error(&analytic, &numeric), checked: count, total })
}
