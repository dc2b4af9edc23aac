//! Ordered-categorical (proportional odds, cumulative logit) likelihood.
//!
//! An observation in stage `k` has latent value `Z̃ = η + ε` with `ε` standard
//! logistic, and `θ_{k-1} < Z̃ <= θ_k`. So `P(Z <= k | η) = F(θ_k - η)` with `F`
//! the logistic CDF. The first cut point is pinned at `θ_1 = -1`; the remaining
//! ones are `θ_k = θ_{k-1} + exp(a_{k-1})` for unconstrained `a`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of the first cut point. The intercept carries the location instead.
pub const FIRST_THRESHOLD: f64 = -1.0;

/// `|θ_k - η|` is clamped here before exponentiation.
const ARG_CLAMP: f64 = 700.0;

/// Floor applied to probabilities inside logarithms.
const PROB_FLOOR: f64 = 1e-290;

#[inline]
fn clamp_arg(x: f64) -> f64 {
    x.clamp(-ARG_CLAMP, ARG_CLAMP)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard logistic CDF.
#[inline]
pub fn logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard logistic density `F(x)(1 - F(x))`.
#[inline]
pub fn logistic_pdf(x: f64) -> f64 {
    logistic_cdf(x) * logistic_cdf(-x)
}

/// Inverse of the logistic CDF.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Ordered cut points on the latent scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    n_stages: usize,
    raw: Vec<f64>,
    theta: Vec<f64>,
}

impl Thresholds {
    pub fn from_raw(raw: &[f64], n_stages: usize) -> Result<Self> {
        if n_stages < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 stages, got {n_stages}"
            )));
        }
        if raw.len() != n_stages - 2 {
            return Err(Error::Dimension(format!(
                "{n_stages} stages need {} raw threshold parameters, got {}",
                n_stages - 2,
                raw.len()
            )));
        }
        if raw.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(
                "raw threshold parameters must be finite".into(),
            ));
        }
        let mut theta = Vec::with_capacity(n_stages - 1);
        theta.push(FIRST_THRESHOLD);
        for a in raw {
            let last = *theta.last().unwrap();
            theta.push(last + a.exp());
        }
        Ok(Self {
            n_stages,
            raw: raw.to_vec(),
            theta,
        })
    }

    /// Builds thresholds from cut points `θ_1 < ... < θ_{K-1}` with `θ_1 = -1`.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        let raw = raw_from_thresholds(theta)?;
        Self::from_raw(&raw, theta.len() + 1)
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Cut points `θ_1..θ_{K-1}` on the linear-predictor scale.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `θ_{k-1}` for 1-based stage `k`; `None` stands for `-∞`.
    pub fn lower(&self, stage: usize) -> Option<f64> {
        if stage <= 1 {
            None
        } else {
            Some(self.theta[stage - 2])
        }
    }

    /// `θ_k` for 1-based stage `k`; `None` stands for `+∞`.
    pub fn upper(&self, stage: usize) -> Option<f64> {
        if stage >= self.n_stages {
            None
        } else {
            Some(self.theta[stage - 1])
        }
    }
}

pub fn thresholds_from_raw(raw: &[f64], n_stages: usize) -> Result<Thresholds> {
    Thresholds::from_raw(raw, n_stages)
}

/// Inverse of [`thresholds_from_raw`].
pub fn raw_from_thresholds(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.is_empty() {
        return Err(Error::Dimension(
            "at least one threshold is required".into(),
        ));
    }
    if theta[0] != FIRST_THRESHOLD {
        return Err(Error::InvalidArgument(format!(
            "first threshold must be {FIRST_THRESHOLD}, got {}",
            theta[0]
        )));
    }
    theta
        .windows(2)
        .map(|w| {
            let gap = w[1] - w[0];
            if gap > 0.0 && gap.is_finite() {
                Ok(gap.ln())
            } else {
                Err(Error::InvalidArgument(format!(
                    "thresholds must be strictly increasing and finite ({} then {})",
                    w[0], w[1]
                )))
            }
        })
        .collect()
}

/// Per-observation quantities shared by the log-likelihood and its derivatives.
///
/// With `a = θ_{k-1} - η` and `b = θ_k - η`, `p = F(b) - F(a)`,
/// `u = f(b)/p` and `v = f(a)/p`.
struct Cell {
    log_p: f64,
    u: f64,
    v: f64,
    /// `1 - 2F(a)` and `1 - 2F(b)`; zero at infinite bounds where unused.
    skew_a: f64,
    skew_b: f64,
}

fn cell(lower: Option<f64>, upper: Option<f64>, eta: f64) -> Cell {
    let a = lower.map(|t| clamp_arg(t - eta));
    let b = upper.map(|t| clamp_arg(t - eta));
    // F(a), 1 - F(a), F(b), 1 - F(b) each evaluated directly.
    let (fa, ga) = a.map_or((0.0, 1.0), |a| (logistic_cdf(a), logistic_cdf(-a)));
    let (fb, gb) = b.map_or((1.0, 0.0), |b| (logistic_cdf(b), logistic_cdf(-b)));
    // F(b) - F(a) = F(b) (1 - F(a)) (1 - e^{a-b})
    let (log_p, gap) = match (a, b) {
        (Some(a), Some(b)) => {
            let gap = -(a - b).exp_m1();
            (-softplus(-b) - softplus(a) + gap.ln(), gap)
        }
        (None, Some(b)) => (-softplus(-b), 1.0),
        (Some(a), None) => (-softplus(a), 1.0),
        (None, None) => (0.0, 1.0),
    };
    let u = if b.is_some() { gb / (ga * gap) } else { 0.0 };
    let v = if a.is_some() { fa / (fb * gap) } else { 0.0 };
    Cell {
        log_p: log_p.max(PROB_FLOOR.ln()),
        u,
        v,
        skew_a: ga - fa,
        skew_b: gb - fb,
    }
}

/// Category probabilities for arbitrary increasing cut points (no `θ_1` pin).
pub fn category_probs_with_cuts(eta: f64, cuts: &[f64]) -> Vec<f64> {
    let k = cuts.len() + 1;
    (1..=k)
        .map(|stage| {
            let lower = (stage > 1).then(|| cuts[stage - 2]);
            let upper = (stage < k).then(|| cuts[stage - 1]);
            cell(lower, upper, eta).log_p.exp()
        })
        .collect()
}

/// `P(Z = k | η)` for `k = 1..K`.
pub fn category_probs(eta: f64, th: &Thresholds) -> Vec<f64> {
    category_probs_with_cuts(eta, th.theta())
}

/// `log P(Z = k | η)` for a single 1-based stage.
pub fn log_category_prob(stage: usize, eta: f64, th: &Thresholds) -> f64 {
    cell(th.lower(stage), th.upper(stage), eta).log_p
}

/// `P(Z <= k | η)` for `k = 1..K`; the last entry is exactly 1.
pub fn cumulative_leq(eta: f64, th: &Thresholds) -> Vec<f64> {
    let mut out: Vec<f64> = th.theta().iter().map(|t| logistic_cdf(t - eta)).collect();
    out.push(1.0);
    out
}

/// `P(Z >= k | η)` for `k = 1..K`; the first entry is exactly 1.
pub fn cumulative_geq(eta: f64, th: &Thresholds) -> Vec<f64> {
    let mut out = Vec::with_capacity(th.n_stages());
    out.push(1.0);
    out.extend(th.theta().iter().map(|t| logistic_cdf(eta - t)));
    out
}

/// `logit P(Z <= k | η)` for `k = 1..K-1`, computed in log space.
pub fn cumulative_log_odds(eta: f64, th: &Thresholds) -> Vec<f64> {
    th.theta()
        .iter()
        .map(|t| {
            let x = clamp_arg(t - eta);
            softplus(x) - softplus(-x)
        })
        .collect()
}

fn check_inputs(y: &[usize], eta: &[f64], th: &Thresholds) -> Result<()> {
    if y.len() != eta.len() {
        return Err(Error::Dimension(format!(
            "{} stages but {} linear predictor values",
            y.len(),
            eta.len()
        )));
    }
    let k = th.n_stages();
    if let Some((i, s)) = y.iter().enumerate().find(|(_, &s)| s < 1 || s > k) {
        return Err(Error::InvalidArgument(format!(
            "observation {i} has stage {s}, outside 1..={k}"
        )));
    }
    Ok(())
}

/// `Σ_i log P(Z = y_i | η_i)`.
pub fn loglik(y: &[usize], eta: &[f64], th: &Thresholds) -> Result<f64> {
    check_inputs(y, eta, th)?;
    Ok(y.iter()
        .zip(eta)
        .map(|(&s, &e)| cell(th.lower(s), th.upper(s), e).log_p)
        .sum())
}

/// Analytic first and second derivatives of [`loglik`].
#[derive(Debug, Clone)]
pub struct LoglikDerivs {
    pub loglik: f64,
    /// `∂l/∂η_i`.
    pub d_eta: DVector<f64>,
    /// `∂²l/∂η_i²`.
    pub d2_eta: DVector<f64>,
    /// `∂l/∂a_m` over raw threshold parameters.
    pub d_raw: DVector<f64>,
    /// `∂²l/∂a_m∂a_l`.
    pub d2_raw: DMatrix<f64>,
    /// `∂²l/∂η_i∂a_m`, one row per observation.
    pub cross: DMatrix<f64>,
}

pub fn loglik_derivs(y: &[usize], eta: &[f64], th: &Thresholds) -> Result<LoglikDerivs> {
    check_inputs(y, eta, th)?;
    let n = y.len();
    let m = th.raw().len();
    let exp_raw: Vec<f64> = th.raw().iter().map(|a| a.exp()).collect();

    let mut out = LoglikDerivs {
        loglik: 0.0,
        d_eta: DVector::zeros(n),
        d2_eta: DVector::zeros(n),
        d_raw: DVector::zeros(m),
        d2_raw: DMatrix::zeros(m, m),
        cross: DMatrix::zeros(n, m),
    };

    for (i, (&stage, &e)) in y.iter().zip(eta).enumerate() {
        let c = cell(th.lower(stage), th.upper(stage), e);
        let h_bb = c.u * c.skew_b - c.u * c.u;
        let h_aa = -c.v * c.skew_a - c.v * c.v;
        let h_ab = c.u * c.v;

        out.loglik += c.log_p;
        out.d_eta[i] = c.v - c.u;
        out.d2_eta[i] = h_aa + 2.0 * h_ab + h_bb;

        if m == 0 {
            continue;
        }
        // θ_j = -1 + Σ_{l<j} e^{a_l} (0-based j), so ∂θ_j/∂a_l = e^{a_l} for l < j.
        // The upper cut of stage k is θ index k-1, the lower cut is index k-2.
        let upper_reach = if stage < th.n_stages() { stage - 1 } else { 0 };
        let lower_reach = stage.saturating_sub(2);
        let jb = |l: usize| if l < upper_reach { exp_raw[l] } else { 0.0 };
        let ja = |l: usize| if l < lower_reach { exp_raw[l] } else { 0.0 };
        let (g_a, g_b) = (-c.v, c.u);

        for l in 0..upper_reach.max(lower_reach) {
            let (a_l, b_l) = (ja(l), jb(l));
            out.d_raw[l] += g_a * a_l + g_b * b_l;
            out.cross[(i, l)] = -((h_aa + h_ab) * a_l + (h_ab + h_bb) * b_l);
            out.d2_raw[(l, l)] += g_a * a_l + g_b * b_l;
            for q in 0..upper_reach.max(lower_reach) {
                let (a_q, b_q) = (ja(q), jb(q));
                out.d2_raw[(l, q)] +=
                    h_aa * a_l * a_q + h_ab * (a_l * b_q + b_l * a_q) + h_bb * b_l * b_q;
            }
        }
    }
    Ok(out)
}
