//! Central finite-difference gradient checking.
//!
//! This module is the independent oracle for the backward pass: it only ever
//! calls forward evaluation, so it shares no code path with `Tape::backward`.

use crate::array::Array;
use crate::tape::{Tape, Var};

/// Evaluate a scalar function of several arrays by rebuilding the forward
/// pass, and estimate its gradient with central differences of step `h`.
pub fn finite_diff_grads<F>(mut eval: F, inputs: &[Array], h: f64) -> Vec<Array>
where
    F: FnMut(&[Array]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Array::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            g.data_mut()[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Build the computation with differentiable leaves for `inputs`, run the
/// backward pass, and compare against central finite differences.
/// Returns the maximum relative error across all input elements.
pub fn check_gradients<F>(build: F, inputs: &[Array], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    // analytic
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf_grad(a.clone())).collect();
    let root = build(&mut tape, &vars);
    assert_eq!(tape.value(root).len(), 1, "gradient check root must be scalar");
    tape.backward(root);
    let analytic: Vec<Array> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| tape.grad(v).cloned().unwrap_or_else(|| Array::zeros(a.shape().to_vec())))
        .collect();

    // numeric
    let numeric = finite_diff_grads(
        |xs: &[Array]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|a| t.leaf_grad(a.clone())).collect();
            let r = build(&mut t, &vs);
            t.value(r).item()
        },
        inputs,
        h,
    );

    let mut max_rel = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs()).max(1e-3);
            max_rel = max_rel.max((x - y).abs() / denom);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = mean(x*x); grad = 2x/n
        let x = Array::row(vec![1.0, -2.0, 0.5]);
        let err = check_gradients(
            |t, vs| {
                let sq = t.mul(vs[0], vs[0]);
                t.mean_all(sq)
            },
            &[x],
            1e-5,
        );
        assert!(err < 1e-7, "relative error {err}");
    }
}
