//! Central finite-difference gradient checks in `f64`.
//!
//! The numerical derivative uses the symmetric five-point stencil
//! `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, which keeps truncation
//! error far below the `1e-4` relative tolerance while `h` stays large enough
//! to avoid roundoff.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

const STEP: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;

/// Relative error with the denominator clamped at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn stencil(mut f: impl FnMut(f64) -> Result<f64>, x: f64) -> Result<f64> {
    let h = STEP;
    let p2 = f(x + 2.0 * h)?;
    let p1 = f(x + h)?;
    let m1 = f(x - h)?;
    let m2 = f(x - 2.0 * h)?;
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

/// Checks `f` against finite differences with respect to every entry of
/// every input. A non-scalar output is reduced to a scalar by a fixed random
/// projection drawn from `seed`. Returns the maximum element-wise relative
/// error.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut eval = |vals: &[Tensor<f64>], keep: bool| -> Result<(f64, Tape<f64>, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let shape = tape.shape(out).to_vec();
        let loss = if shape == [1, 1] {
            out
        } else {
            let w = weights
                .get_or_insert_with(|| Tensor::randn(shape[0], shape[1], &mut rng))
                .clone();
            let w = tape.constant(w);
            let p = tape.mul(out, w)?;
            tape.sum(p)
        };
        let v = tape.value(loss).item();
        if keep {
            tape.backward(loss)?;
        }
        Ok((v, tape, vars))
    };

    let (_, tape, vars) = eval(inputs, true)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let x0 = input.data()[e];
            let numeric = stencil(
                |x| {
                    let mut vals = inputs.to_vec();
                    vals[k].data_mut()[e] = x;
                    Ok(eval(&vals, false)?.0)
                },
                x0,
            )?;
            worst = worst.max(relative_error(analytic[k].data()[e], numeric));
        }
    }
    Ok(worst)
}

/// Same check for a scalar loss over every parameter in a store.
pub fn check_param_gradients<F>(store: &ParamStore<f64>, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    let mut with_grads = store.clone();
    with_grads.load_grads(&tape);

    let mut worst = 0.0f64;
    for id in store.ids() {
        let analytic = with_grads.grad(id).expect("loaded").clone();
        for e in 0..store.value(id).len() {
            let x0 = store.value(id).data()[e];
            let numeric = stencil(
                |x| {
                    let mut s = store.clone();
                    s.value_mut(id).data_mut()[e] = x;
                    let mut tape = Tape::new();
                    let l = f(&mut tape, &s)?;
                    Ok(tape.value(l).item())
                },
                x0,
            )?;
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
    }
    Ok(worst)
}
