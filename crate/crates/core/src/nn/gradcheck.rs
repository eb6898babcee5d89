//! Central finite-difference checks of tape gradients in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar parameter elements compared.
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `name[index]` where the largest error occurred.
    pub worst: String,
}

/// Contracts `out` with fixed pseudo-random weights so that every output
/// element influences the scalar being differentiated.
fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let shape = g.shape(out).to_vec();
    let n = shape.iter().product();
    let w = Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn evaluate(
    store: &ParamStore<f64>,
    training: bool,
    build: &impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new(training);
    let out = build(&mut g, store)?;
    let l = project(&mut g, out)?;
    Ok(g.value(l).data()[0])
}

/// Compares reverse-mode gradients of a projection of `build`'s output
/// against central differences with step `h` for every trainable parameter.
///
/// With `per_param = Some(m)`, at most `m` evenly spaced elements of each
/// parameter are perturbed. `store` is restored before returning.
pub fn check_gradients(
    store: &mut ParamStore<f64>,
    training: bool,
    h: f64,
    per_param: Option<usize>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut g = Graph::new(training);
    let out = build(&mut g, store)?;
    let l = project(&mut g, out)?;
    store.zero_grad();
    g.backward(l, store)?;

    let names: Vec<String> = store.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new() };
    for name in names {
        let param = store.get(&name).ok_or_else(|| Error::Internal(format!("lost parameter {name}")))?;
        let analytic = param.grad.clone();
        let base = param.value.clone();
        let n = base.numel();
        let picks: Vec<usize> = match per_param {
            Some(m) if m < n => (0..m).map(|j| j * n / m).collect(),
            _ => (0..n).collect(),
        };
        for i in picks {
            let mut plus = base.clone();
            plus.data_mut()[i] += h;
            store.set_value(&name, plus)?;
            let lp = evaluate(store, training, &build);
            let mut minus = base.clone();
            minus.data_mut()[i] -= h;
            store.set_value(&name, minus)?;
            let lm = evaluate(store, training, &build);
            store.set_value(&name, base.clone())?;
            let numeric = (lp? - lm?) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
