//! Deterministic full-batch minimizers over flat parameter vectors.

/// Outcome of a full-batch solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient descent with Barzilai-Borwein step sizes safeguarded by Armijo
/// backtracking. `f` returns the value and gradient at a point. Stops once
/// the gradient norm is at most `tol`.
pub fn minimize<F>(f: F, x0: Vec<f64>, tol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for iter in 0..max_iter {
        let gn = norm(&grad);
        if gn <= tol {
            return Minimum { x, value, grad_norm: gn, iterations: iter, converged: true };
        }
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = (dot(&s, &s) / sy).clamp(1e-10, 1e10);
            }
        }
        // rounding slack lets the line search accept steps once decreases
        // fall below the resolution of `value`
        let slack = 8.0 * f64::EPSILON * value.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let (tv, tg) = f(&trial);
            if tv.is_finite() && tv <= value - 1e-4 * step * gn * gn + slack {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nv, ng)) = accepted else {
            return Minimum { x, value, grad_norm: gn, iterations: iter, converged: false };
        };
        prev = Some((std::mem::replace(&mut x, nx), std::mem::replace(&mut grad, ng)));
        value = nv;
    }
    let gn = norm(&grad);
    Minimum { x, value, grad_norm: gn, iterations: max_iter, converged: gn <= tol }
}

/// Plain gradient descent with a fixed step; returns the value after every
/// step (index 0 is the starting value).
pub fn fixed_step_descent<F>(f: F, mut x: Vec<f64>, step: f64, iters: usize) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (mut value, mut grad) = f(&x);
    let mut values = vec![value];
    for _ in 0..iters {
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= step * g;
        }
        (value, grad) = f(&x);
        values.push(value);
    }
    (x, values)
}
