//! Box-constrained quasi-Newton minimization with projected BFGS steps.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub lower: f64,
    pub upper: f64,
    pub max_iter: usize,
    /// Stop when the projected gradient's ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop when an iteration improves the objective by less than `f_tol · (1 + |f|)`.
    pub f_tol: f64,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            lower: -12.0,
            upper: 12.0,
            max_iter: 100,
            grad_tol: 1e-4,
            f_tol: 1e-10,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut DVector<f64>, lo: f64, hi: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

/// Coordinates held at a bound because the gradient pushes outward.
fn active(x: &DVector<f64>, g: &DVector<f64>, lo: f64, hi: f64) -> Vec<bool> {
    x.iter()
        .zip(g.iter())
        .map(|(&v, &d)| (v <= lo && d > 0.0) || (v >= hi && d < 0.0))
        .collect()
}

fn projected_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, lo: f64, hi: f64) -> f64 {
    active(x, g, lo, hi)
        .iter()
        .zip(g.iter())
        .filter(|(a, _)| !**a)
        .fold(0.0, |m, (_, d)| m.max(d.abs()))
}

/// Minimizes `f` over the box `[lower, upper]^n`; `f` returns the value and gradient.
pub fn minimize_box<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (lo, hi) = (opts.lower, opts.upper);
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, lo, hi);
    let (mut fx, g) = f(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let act = active(&x, &g, lo, hi);
        let mut d = -(&inv_h * &g);
        for (i, &a) in act.iter().enumerate() {
            if a {
                d[i] = 0.0;
            }
        }
        // Fall back to steepest descent on the free coordinates if not a descent direction.
        if d.dot(&g) >= 0.0 {
            inv_h = DMatrix::identity(n, n);
            d = -g.clone();
            for (i, &a) in act.iter().enumerate() {
                if a {
                    d[i] = 0.0;
                }
            }
        }
        let big = d.amax();
        if big > opts.max_step {
            d *= opts.max_step / big;
        }

        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let mut cand = &x + t * &d;
            project(&mut cand, lo, hi);
            let step = &cand - &x;
            if step.amax() == 0.0 {
                break;
            }
            let (fc, gc) = f(cand.as_slice())?;
            if fc.is_finite() && fc <= fx + 1e-4 * g.dot(&step) {
                next = Some((cand, fc, DVector::from_vec(gc)));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnext, gn)) = next else {
            converged = projected_gradient_norm(&x, &g, lo, hi) < opts.grad_tol * 100.0;
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            inv_h = &left * &inv_h * &right + rho * &s * s.transpose();
        }
        let improvement = fx - fnext;
        x = xn;
        g = gn;
        fx = fnext;
        if improvement.abs() < opts.f_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    Ok(BfgsResult {
        x: x.iter().copied().collect(),
        value: fx,
        gradient: g.iter().copied().collect(),
        iterations,
        converged,
    })
}
