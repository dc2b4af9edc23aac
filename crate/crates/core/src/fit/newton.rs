//! Penalized Newton iteration jointly over coefficients and raw thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::ModelMatrices;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, weighted_crossprod};
use crate::ocat::{logit, loglik, loglik_derivs, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged when `|g|∞ < tol · (1 + |l_p|)`.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            max_halvings: 30,
        }
    }
}

/// Penalized optimum over `(β, a)`.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub beta: DVector<f64>,
    pub raw: Vec<f64>,
    /// Negative Hessian of the log-likelihood over `(β, a)`.
    pub hessian: DMatrix<f64>,
    pub loglik: f64,
    pub penalized_ll: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Set when a ridge had to be added to the Newton matrix at some iteration.
    pub ridge_used: bool,
}

impl PenalizedFit {
    pub fn thresholds(&self, n_stages: usize) -> Result<Thresholds> {
        Thresholds::from_raw(&self.raw, n_stages)
    }

    /// `(β, a)` stacked.
    pub fn params(&self) -> DVector<f64> {
        stack(&self.beta, &self.raw)
    }
}

fn stack(beta: &DVector<f64>, raw: &[f64]) -> DVector<f64> {
    DVector::from_iterator(beta.len() + raw.len(), beta.iter().chain(raw).copied())
}

/// Intercept and raw thresholds matched to smoothed empirical cumulative frequencies.
pub fn initial_values(m: &ModelMatrices) -> (DVector<f64>, Vec<f64>) {
    let k = m.n_stages;
    let mut counts = vec![0.5; k];
    for &s in &m.y {
        counts[s - 1] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut cum = 0.0;
    let cuts: Vec<f64> = counts[..k - 1]
        .iter()
        .map(|c| {
            cum += c;
            logit(cum / total)
        })
        .collect();
    let mut beta = DVector::zeros(m.total_p());
    beta[0] = -1.0 - cuts[0];
    let raw = cuts.windows(2).map(|w| (w[1] - w[0]).ln()).collect();
    (beta, raw)
}

/// Log-likelihood pieces at one parameter value.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub penalized_ll: f64,
    /// Gradient of `l_p` over `(β, a)`.
    pub gradient: DVector<f64>,
    /// Negative Hessian of `l` over `(β, a)`.
    pub hessian: DMatrix<f64>,
}

/// Log-likelihood, penalized log-likelihood, its gradient and the negative Hessian of `l`.
pub fn evaluate(
    m: &ModelMatrices,
    s_lambda: &DMatrix<f64>,
    beta: &DVector<f64>,
    raw: &[f64],
) -> Result<Evaluation> {
    let th = Thresholds::from_raw(raw, m.n_stages)?;
    let eta = &m.x * beta;
    let d = loglik_derivs(&m.y, eta.as_slice(), &th)?;
    let p = beta.len();
    let q = raw.len();

    let s_beta = s_lambda * beta;
    let penalized_ll = d.loglik - 0.5 * beta.dot(&s_beta);

    let mut gradient = DVector::zeros(p + q);
    gradient
        .rows_mut(0, p)
        .copy_from(&(m.x.tr_mul(&d.d_eta) - s_beta));
    gradient.rows_mut(p, q).copy_from(&d.d_raw);

    let mut hessian = DMatrix::zeros(p + q, p + q);
    hessian
        .view_mut((0, 0), (p, p))
        .copy_from(&weighted_crossprod(&m.x, &(-&d.d2_eta)));
    if q > 0 {
        let cross = -m.x.tr_mul(&d.cross);
        hessian.view_mut((0, p), (p, q)).copy_from(&cross);
        hessian
            .view_mut((p, 0), (q, p))
            .copy_from(&cross.transpose());
        hessian.view_mut((p, p), (q, q)).copy_from(&(-&d.d2_raw));
    }
    Ok(Evaluation {
        loglik: d.loglik,
        penalized_ll,
        gradient,
        hessian,
    })
}

fn penalized_value(
    m: &ModelMatrices,
    s_lambda: &DMatrix<f64>,
    beta: &DVector<f64>,
    raw: &[f64],
) -> f64 {
    if raw.iter().any(|a| a.is_nan() || a.abs() >= 700.0) || beta.iter().any(|b| !b.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let Ok(th) = Thresholds::from_raw(raw, m.n_stages) else {
        return f64::NEG_INFINITY;
    };
    let eta = &m.x * beta;
    match loglik(&m.y, eta.as_slice(), &th) {
        Ok(l) if l.is_finite() => l - 0.5 * beta.dot(&(s_lambda * beta)),
        _ => f64::NEG_INFINITY,
    }
}

/// `S_λ` padded with zero rows and columns for the raw thresholds.
pub(crate) fn padded(s: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let p = s.nrows();
    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(s);
    out
}

/// Solves `(N + r I) δ = g`, escalating the ridge `r` until the Cholesky succeeds.
fn ridged_solve(
    n: &DMatrix<f64>,
    g: &DVector<f64>,
    start_ridge: f64,
) -> Option<(DVector<f64>, f64)> {
    let scale = n
        .diagonal()
        .iter()
        .fold(0.0f64, |a, &d| a.max(d.abs()))
        .max(1e-300);
    let mut ridge = start_ridge;
    for _ in 0..40 {
        let mut a = n.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += ridge * scale;
        }
        if let Some(ch) = cholesky(&a) {
            let step = ch.solve(g);
            if step.iter().all(|v| v.is_finite()) {
                return Some((step, ridge));
            }
        }
        ridge = if ridge == 0.0 { 1e-6 } else { ridge * 10.0 };
    }
    None
}

/// Maximizes `l(β, a) − ½ βᵀ S_λ β` by Newton's method with step halving.
///
/// `start` gives `(β, a)`; empirical-frequency initial values are used when absent.
pub fn inner_newton(
    m: &ModelMatrices,
    lambdas: &[f64],
    start: Option<(&DVector<f64>, &[f64])>,
    opts: &NewtonOptions,
) -> Result<PenalizedFit> {
    if lambdas.len() != m.layout.n_penalties() {
        return Err(Error::Dimension(format!(
            "{} smoothing parameters for {} penalties",
            lambdas.len(),
            m.layout.n_penalties()
        )));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidArgument(
            "smoothing parameters must be finite and non-negative".into(),
        ));
    }
    let (mut beta, mut raw) = match start {
        Some((b, r)) => (b.clone(), r.to_vec()),
        None => initial_values(m),
    };
    if beta.len() != m.total_p() || raw.len() != m.n_raw() {
        return Err(Error::Dimension(
            "starting values do not match the model".into(),
        ));
    }
    let s_lambda = m.layout.penalty_matrix(lambdas);
    let s_full = padded(&s_lambda, m.n_raw());
    let p = beta.len();
    let mut ridge_used = false;
    let mut last_norm = f64::INFINITY;

    for iter in 0..=opts.max_iter {
        let ev = evaluate(m, &s_lambda, &beta, &raw)?;
        let gnorm = ev.gradient.amax();
        last_norm = gnorm;
        if !ev.penalized_ll.is_finite() {
            return Err(Error::Numeric(
                "penalized log-likelihood is not finite".into(),
            ));
        }
        if gnorm < opts.tol * (1.0 + ev.penalized_ll.abs()) {
            return Ok(PenalizedFit {
                beta,
                raw,
                hessian: ev.hessian,
                loglik: ev.loglik,
                penalized_ll: ev.penalized_ll,
                gradient_norm: gnorm,
                iterations: iter,
                ridge_used,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let n = &ev.hessian + &s_full;
        let noise = 1e-12 * (1.0 + ev.penalized_ll.abs());
        let mut ridge = 0.0;
        let mut accepted = false;
        while !accepted {
            let Some((step, used)) = ridged_solve(&n, &ev.gradient, ridge) else {
                break;
            };
            ridge_used |= used > 0.0;
            let mut t = 1.0;
            for _ in 0..=opts.max_halvings {
                let cand_beta = &beta + t * step.rows(0, p);
                let cand_raw: Vec<f64> = raw
                    .iter()
                    .zip(step.rows(p, raw.len()).iter())
                    .map(|(a, d)| a + t * d)
                    .collect();
                let value = penalized_value(m, &s_lambda, &cand_beta, &cand_raw);
                // A full step whose change is below rounding noise is still taken.
                let floor = if t == 1.0 { noise } else { 0.0 };
                if value >= ev.penalized_ll - floor {
                    beta = cand_beta;
                    raw = cand_raw;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if used >= 1e3 {
                    break;
                }
                ridge = if used == 0.0 { 1e-6 } else { used * 10.0 };
                ridge_used = true;
            }
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        gradient_norm: last_norm,
        last_iterate: stack(&beta, &raw).iter().copied().collect(),
    })
}
