//! Laplace approximate marginal likelihood.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::newton::{padded, PenalizedFit};
use crate::basis::ModelMatrices;
use crate::error::{Error, Result};
use crate::linalg::log_det_spd;

/// `l_p + ½ log|S|₊ − ½ log|H + S| + (M_p / 2) log 2π`.
pub fn laml_from_parts(
    penalized_ll: f64,
    log_det_s: f64,
    h_plus_s: &DMatrix<f64>,
    null_dim: usize,
) -> Result<f64> {
    let ld = log_det_spd(h_plus_s)
        .map_err(|_| Error::Numeric("H + S_λ is not positive definite".into()))?;
    Ok(penalized_ll + 0.5 * log_det_s - 0.5 * ld + 0.5 * null_dim as f64 * (2.0 * PI).ln())
}

/// Unpenalized dimension of `(β, a)`: the coefficient null space plus the raw thresholds.
pub fn null_dim(m: &ModelMatrices) -> usize {
    m.layout.nullspace_dim() + m.n_raw()
}

pub fn laml(pf: &PenalizedFit, m: &ModelMatrices, lambdas: &[f64]) -> Result<f64> {
    let rho: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let log_det_s = m.layout.log_det_penalty(&rho)?;
    let s = padded(&m.layout.penalty_matrix(lambdas), m.n_raw());
    laml_from_parts(pf.penalized_ll, log_det_s, &(&pf.hessian + s), null_dim(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::assemble_design;
    use crate::data::{Dataset, Frame, StageCoding};
    use crate::fit::newton::{inner_newton, NewtonOptions};
    use crate::formula::parse_formula;
    use crate::linalg::log_pseudo_det;
    use crate::ocat::{loglik, Thresholds};

    /// Trapezoid rule of `exp(f)` over a wide interval, in log space.
    fn log_integral_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let vals: Vec<f64> = (0..=n).map(|i| f(lo + i as f64 * h)).collect();
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 || i == n { 0.5 } else { 1.0 } * (v - top).exp())
            .sum();
        top + (s * h).ln()
    }

    #[test]
    fn quadratic_objective_matches_gaussian_integral() {
        // l(b1, b2) = c − ½ (b − m)ᵀ A (b − m); b1 penalized by λ, b2 free.
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.8, 0.8, 2.0]);
        let (m1, m2, c, lambda) = (0.7, -1.2, -5.0, 2.5);
        let s = DMatrix::from_row_slice(2, 2, &[lambda, 0.0, 0.0, 0.0]);
        let n = &a + &s;
        let mode = n
            .clone()
            .lu()
            .solve(&(&a * nalgebra::DVector::from_vec(vec![m1, m2])))
            .unwrap();
        let lp_at = |b1: f64, b2: f64| {
            let d = nalgebra::DVector::from_vec(vec![b1 - m1, b2 - m2]);
            c - 0.5 * d.dot(&(&a * &d)) - 0.5 * lambda * b1 * b1
        };
        let lp = lp_at(mode[0], mode[1]);
        let approx = laml_from_parts(lp, lambda.ln(), &n, 1).unwrap();

        // log ∫∫ exp(l) N(b1; 0, 1/λ) db1 db2 by nested quadrature.
        let inner = |b1: f64| log_integral_1d(|b2| lp_at(b1, b2), -30.0, 30.0, 4000);
        let exact = log_integral_1d(inner, -30.0, 30.0, 4000) + 0.5 * (lambda / (2.0 * PI)).ln();
        assert!((approx - exact).abs() < 1e-8, "{approx} vs {exact}");
    }

    fn data() -> Dataset {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 20.0).collect();
        let y = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let z = (v * 1.1).sin() * 2.0 + [-1.4, 0.3, 1.9, -0.6, 0.9][i % 5];
                if z < -1.0 {
                    1
                } else if z < 0.5 {
                    2
                } else {
                    3
                }
            })
            .collect();
        let frame = Frame::new(n).with_numeric("x", x).unwrap();
        Dataset::new("y", StageCoding::numeric(3).unwrap(), y, frame).unwrap()
    }

    #[test]
    fn continuous_in_log_lambda() {
        let m = assemble_design(&data(), &parse_formula("y ~ s(x, k=8)").unwrap()).unwrap();
        let o = NewtonOptions::default();
        for rho in [-3.0, 0.0, 4.0] {
            let lam = [f64::exp(rho)];
            let lam2 = [f64::exp(rho + 1e-6)];
            let f1 = inner_newton(&m, &lam, None, &o).unwrap();
            let f2 = inner_newton(&m, &lam2, Some((&f1.beta, &f1.raw)), &o).unwrap();
            let d = laml(&f1, &m, &lam).unwrap() - laml(&f2, &m, &lam2).unwrap();
            assert!(d.abs() < 1e-3);
        }
    }

    #[test]
    fn decoupled_unpenalized_dimension_cancels_in_differences() {
        // An extra free coefficient with fixed curvature, independent of the others.
        let m = assemble_design(&data(), &parse_formula("y ~ s(x, k=8)").unwrap()).unwrap();
        let o = NewtonOptions::default();
        let parts = |l: f64| {
            let f = inner_newton(&m, &[l], None, &o).unwrap();
            let s = padded(&m.layout.penalty_matrix(&[l]), m.n_raw());
            let hs = &f.hessian + s;
            let ld = m.layout.log_det_penalty(&[l.ln()]).unwrap();
            let dim = hs.nrows();
            let mut aug = DMatrix::zeros(dim + 1, dim + 1);
            aug.view_mut((0, 0), (dim, dim)).copy_from(&hs);
            aug[(dim, dim)] = 7.3;
            (
                laml_from_parts(f.penalized_ll, ld, &hs, null_dim(&m)).unwrap(),
                laml_from_parts(f.penalized_ll, ld, &aug, null_dim(&m) + 1).unwrap(),
            )
        };
        let (a1, b1) = parts(10.0);
        let (a2, b2) = parts(0.1);
        assert!(((a1 - a2) - (b1 - b2)).abs() < 1e-9);
        assert_eq!(null_dim(&m), 3);
    }

    #[test]
    fn closed_form_log_det_matches_direct() {
        let m = assemble_design(&data(), &parse_formula("y ~ s(x, k=8)").unwrap()).unwrap();
        let lam = [3.0];
        let s = m.layout.penalty_matrix(&lam);
        let direct = log_pseudo_det(&s, 6).unwrap();
        let closed = m.layout.log_det_penalty(&[3f64.ln()]).unwrap();
        assert!((direct - closed).abs() < 1e-8);
    }

    #[test]
    fn intercept_only_laplace_close_to_quadrature() {
        // One free coefficient, no penalty: laml ≈ log ∫ exp(l(β)) dβ.
        let n = 400;
        let y: Vec<usize> = (0..n).map(|i| if i % 3 == 0 { 2 } else { 1 }).collect();
        let d = Dataset::new(
            "y",
            StageCoding::numeric(2).unwrap(),
            y.clone(),
            Frame::new(n),
        )
        .unwrap();
        let m = assemble_design(&d, &parse_formula("y ~ 1").unwrap()).unwrap();
        let f = inner_newton(&m, &[], None, &NewtonOptions::default()).unwrap();
        let approx = laml(&f, &m, &[]).unwrap();
        let th = Thresholds::from_raw(&[], 2).unwrap();
        let exact = log_integral_1d(|b| loglik(&y, &vec![b; n], &th).unwrap(), -5.0, 5.0, 20000);
        assert!((approx - exact).abs() < 5e-3, "{approx} vs {exact}");
    }
}
