//! Central finite-difference gradient checks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn scalar(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::shape("grad_check", format!("function output has shape {:?}", v.shape)));
    }
    Ok(v.item())
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)` for
/// a scalar function of one tensor.
pub fn grad_check(x: &Tensor, eps: f64, mut f: impl FnMut(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    scalar(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(&x.shape));

    let mut eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let out = f(&mut tape, v)?;
        scalar(&tape, out)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut hi = x.clone();
        hi.data[i] += eps;
        let mut lo = x.clone();
        lo.data[i] -= eps;
        let numeric = (eval(hi)? - eval(lo)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Gradient check over the trainable parameters of a store. With
/// `per_param = Some(n)` at most `n` coordinates per parameter are sampled
/// (seeded); `None` checks all of them. `f` must be deterministic.
pub fn grad_check_params(
    store: &ParamStore,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
    mut f: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    grads.accumulate(&tape, &mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let n = store.value(id).numel();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.value(id).data[i];
            let mut eval = |v: f64, work: &mut ParamStore| -> Result<f64> {
                work.value_mut(id).data[i] = v;
                let mut tape = Tape::new();
                let out = f(&mut tape, work)?;
                scalar(&tape, out)
            };
            let hi = eval(orig + eps, &mut work)?;
            let lo = eval(orig - eps, &mut work)?;
            work.value_mut(id).data[i] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            let e = rel_err(analytic.grad(id).data[i], numeric);
            report.checked += 1;
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
