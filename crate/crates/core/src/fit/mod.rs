//! Penalized likelihood fitting with smoothing parameters chosen by LAML.

mod laml;
mod newton;
mod outer;
mod summary;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{DesignLayout, ModelMatrices, TermBasis};
use crate::data::{Frame, StageCoding};
use crate::error::{Error, Result};
use crate::formula::ModelSpec;
use crate::linalg::{row_major, spd_inverse};
use crate::ocat::Thresholds;

pub use laml::{laml, laml_from_parts, null_dim};
pub use newton::{evaluate, initial_values, inner_newton, Evaluation, NewtonOptions, PenalizedFit};
pub use outer::{minimize_box, BfgsOptions, BfgsResult};
pub use summary::{summarize, CoefficientRow, Summary, TermRow};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub newton: NewtonOptions,
    pub outer: BfgsOptions,
    /// Central-difference step in `ρ = log λ`.
    pub fd_step: f64,
    /// Starting `ρ` for every smoothing parameter.
    pub rho_start: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            outer: BfgsOptions::default(),
            fd_step: 1e-3,
            rho_start: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEdf {
    pub label: String,
    pub edf: f64,
    pub ncols: usize,
    pub lambdas: Vec<f64>,
}

/// A fitted model: estimates, smoothing parameters, posterior covariance and fit statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub layout: DesignLayout,
    pub coding: StageCoding,
    pub n: usize,
    pub beta: Vec<f64>,
    pub thresholds: Thresholds,
    pub lambdas: Vec<f64>,
    /// Per smoothing parameter: true when `log λ` ended on a bound.
    pub at_bound: Vec<bool>,
    /// `(H + S_λ)⁻¹` over `(β, a)`.
    #[serde(with = "row_major")]
    pub vb: DMatrix<f64>,
    pub edf: Vec<TermEdf>,
    pub edf_total: f64,
    pub loglik: f64,
    pub penalized_ll: f64,
    pub laml: f64,
    pub null_loglik: f64,
    pub aic: f64,
    pub deviance_explained: f64,
    pub gradient_norm: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub outer_converged: bool,
    pub ridge_used: bool,
}

impl FitResult {
    pub fn n_stages(&self) -> usize {
        self.thresholds.n_stages()
    }

    pub fn total_p(&self) -> usize {
        self.layout.total_p
    }

    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// `(β̂, â)` stacked.
    pub fn params(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.beta.len() + self.thresholds.raw().len(),
            self.beta.iter().chain(self.thresholds.raw()).copied(),
        )
    }

    /// Posterior covariance of `β` alone.
    pub fn vb_beta(&self) -> DMatrix<f64> {
        let p = self.total_p();
        self.vb.view((0, 0), (p, p)).clone_owned()
    }

    pub fn linear_predictor(&self, frame: &Frame) -> Result<DVector<f64>> {
        Ok(self.layout.prediction_matrix(frame)? * self.beta_vector())
    }
}

/// Effective degrees of freedom per term and in total, `diag((H + S)⁻¹ H)` summed over `β`.
pub fn edf(
    layout: &DesignLayout,
    vb: &DMatrix<f64>,
    hessian: &DMatrix<f64>,
    lambdas: &[f64],
) -> (Vec<TermEdf>, f64) {
    let p = layout.total_p;
    let diag: Vec<f64> = (0..p)
        .map(|i| vb.row(i).dot(&hessian.column(i).transpose()))
        .collect();
    let terms: Vec<TermEdf> = layout
        .terms
        .iter()
        .map(|t| TermEdf {
            label: t.label.clone(),
            edf: diag[t.offset..t.offset + t.ncols].iter().sum(),
            ncols: t.ncols,
            lambdas: t.penalties.iter().map(|&j| lambdas[j]).collect(),
        })
        .collect();
    let total = diag.iter().sum();
    (terms, total)
}

/// `−2 l + 2 (τ + K − 2)`: the thresholds count as unpenalized parameters.
pub fn aic(loglik: f64, edf_total: f64, n_stages: usize) -> f64 {
    -2.0 * loglik + 2.0 * (edf_total + (n_stages - 2) as f64)
}

/// Log-likelihood of the intercept-and-thresholds model, `Σ_k n_k log(n_k / n)`.
pub fn null_loglik(y: &[usize], n_stages: usize) -> f64 {
    let mut counts = vec![0usize; n_stages];
    for &s in y {
        counts[s - 1] += 1;
    }
    let n = y.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n).ln())
        .sum()
}

/// `1 − l / l_null`, with saturated log-likelihood 0.
pub fn deviance_explained(loglik: f64, null_loglik: f64) -> f64 {
    if null_loglik == 0.0 {
        return 0.0;
    }
    1.0 - loglik / null_loglik
}

struct Outer {
    lambdas: Vec<f64>,
    at_bound: Vec<bool>,
    iterations: usize,
    converged: bool,
}

fn finish(m: &ModelMatrices, pf: PenalizedFit, outer: Outer) -> Result<FitResult> {
    let thresholds = pf.thresholds(m.n_stages)?;
    let s = newton_padded(m, &outer.lambdas);
    let vb = spd_inverse(&(&pf.hessian + &s))
        .map_err(|_| Error::Numeric("H + S_λ is not positive definite at the optimum".into()))?;
    let laml_value = laml(&pf, m, &outer.lambdas)?;
    let (edf_terms, edf_total) = edf(&m.layout, &vb, &pf.hessian, &outer.lambdas);
    let null_ll = null_loglik(&m.y, m.n_stages);
    Ok(FitResult {
        spec: m.spec.clone(),
        layout: m.layout.clone(),
        coding: m.coding.clone(),
        n: m.n(),
        beta: pf.beta.iter().copied().collect(),
        thresholds,
        at_bound: outer.at_bound,
        vb,
        edf: edf_terms,
        edf_total,
        loglik: pf.loglik,
        penalized_ll: pf.penalized_ll,
        laml: laml_value,
        null_loglik: null_ll,
        aic: aic(pf.loglik, edf_total, m.n_stages),
        deviance_explained: deviance_explained(pf.loglik, null_ll),
        gradient_norm: pf.gradient_norm,
        inner_iterations: pf.iterations,
        outer_iterations: outer.iterations,
        outer_converged: outer.converged,
        ridge_used: pf.ridge_used,
        lambdas: outer.lambdas,
    })
}

fn newton_padded(m: &ModelMatrices, lambdas: &[f64]) -> DMatrix<f64> {
    newton::padded(&m.layout.penalty_matrix(lambdas), m.n_raw())
}

/// Fits with the smoothing parameters held fixed.
pub fn fit_with_lambdas(
    m: &ModelMatrices,
    lambdas: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let pf = inner_newton(m, lambdas, None, &opts.newton)?;
    let outer = Outer {
        lambdas: lambdas.to_vec(),
        at_bound: vec![false; lambdas.len()],
        iterations: 0,
        converged: true,
    };
    finish(m, pf, outer)
}

/// Chooses `λ` by maximizing LAML over `ρ = log λ` and returns the fit at the optimum.
pub fn optimize_lambdas(m: &ModelMatrices, opts: &FitOptions) -> Result<FitResult> {
    let q = m.layout.n_penalties();
    if q == 0 {
        return fit_with_lambdas(m, &[], opts);
    }
    let rho0 = vec![opts.rho_start; q];
    let lam = |rho: &[f64]| rho.iter().map(|r| r.exp()).collect::<Vec<f64>>();
    let mut current = inner_newton(m, &lam(&rho0), None, &opts.newton)?;
    let h = opts.fd_step;

    let objective = |rho: &[f64]| -> Result<(f64, Vec<f64>)> {
        let centre = inner_newton(
            m,
            &lam(rho),
            Some((&current.beta, &current.raw)),
            &opts.newton,
        )?;
        let value = -laml(&centre, m, &lam(rho))?;
        let grads = (0..2 * q)
            .into_par_iter()
            .map(|j| {
                let mut r = rho.to_vec();
                r[j / 2] += if j % 2 == 0 { h } else { -h };
                let l = lam(&r);
                let f = inner_newton(m, &l, Some((&centre.beta, &centre.raw)), &opts.newton)?;
                laml(&f, m, &l)
            })
            .collect::<Result<Vec<f64>>>()?;
        let gradient = (0..q)
            .map(|i| -(grads[2 * i] - grads[2 * i + 1]) / (2.0 * h))
            .collect();
        current = centre;
        Ok((value, gradient))
    };
    let res = minimize_box(objective, &rho0, &opts.outer)?;

    let lambdas = lam(&res.x);
    let pf = inner_newton(
        m,
        &lambdas,
        Some((&current.beta, &current.raw)),
        &opts.newton,
    )?;
    let eps = 1e-9;
    let outer = Outer {
        at_bound: res
            .x
            .iter()
            .map(|&r| r <= opts.outer.lower + eps || r >= opts.outer.upper - eps)
            .collect(),
        lambdas,
        iterations: res.iterations,
        converged: res.converged,
    };
    finish(m, pf, outer)
}

/// Names of the coefficient columns, in design order.
pub fn coefficient_names(layout: &DesignLayout) -> Vec<String> {
    let mut names = Vec::with_capacity(layout.total_p);
    for t in &layout.terms {
        match &t.basis {
            TermBasis::Intercept => names.push("(Intercept)".to_string()),
            TermBasis::Linear { name } => names.push(name.clone()),
            TermBasis::Factor { name, levels } => {
                names.extend(levels[1..].iter().map(|l| format!("{name}{l}")))
            }
            _ => names.extend((1..=t.ncols).map(|j| format!("{}.{j}", t.label))),
        }
    }
    names
}
