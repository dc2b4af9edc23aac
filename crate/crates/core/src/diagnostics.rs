//! Surrogate residuals for the ordered-categorical model.
//!
//! For an observation in stage `k` with linear predictor `η`, a latent value `S` is
//! drawn from the logistic distribution centred on `η` truncated to `(θ_{k-1}, θ_k]`;
//! the residual is `S − η`. Under the model these residuals are standard logistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::ocat::{logistic_cdf, logit, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResiduals {
    pub seed: u64,
    pub replicates: usize,
    /// Row index into the data for each residual; replicates follow one another.
    pub obs: Vec<usize>,
    pub replicate: Vec<usize>,
    pub stage: Vec<usize>,
    pub eta: Vec<f64>,
    pub r: Vec<f64>,
}

impl SurrogateResiduals {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// One draw of `S − η` with `S` in `(lower, upper]`.
fn truncated_residual(eta: f64, lower: Option<f64>, upper: Option<f64>, w: f64) -> f64 {
    let a = lower.map_or(f64::NEG_INFINITY, |t| t - eta);
    let b = upper.map_or(f64::INFINITY, |t| t - eta);
    // Work on whichever tail keeps the interval's probabilities away from 1.
    let r = if a > 0.0 {
        let (hi, lo) = (logistic_cdf(-a), logistic_cdf(-b));
        -logit(lo + w * (hi - lo))
    } else {
        let (lo, hi) = (logistic_cdf(a), logistic_cdf(b));
        logit(lo + w * (hi - lo))
    };
    nudge_inside(r, eta, lower, upper)
}

/// Moves `r` by whole ulps until `r + η` lies in `(lower, upper]`.
fn nudge_inside(mut r: f64, eta: f64, lower: Option<f64>, upper: Option<f64>) -> f64 {
    if !r.is_finite() {
        r = match (lower, upper) {
            (_, Some(u)) if r > 0.0 => u - eta,
            (Some(l), _) => l - eta,
            (None, Some(u)) => u - eta,
            (None, None) => 0.0,
        };
    }
    if let Some(l) = lower {
        while r + eta <= l {
            r = r.next_up();
        }
    }
    if let Some(u) = upper {
        while r + eta > u {
            r = r.next_down();
        }
    }
    r
}

/// Surrogate residuals for stages `y` at linear predictors `eta` with thresholds `th`.
pub fn surrogate_from_eta(
    y: &[usize],
    eta: &[f64],
    th: &Thresholds,
    seed: u64,
    replicates: usize,
) -> Result<SurrogateResiduals> {
    if y.len() != eta.len() {
        return Err(Error::Dimension(format!(
            "{} stages for {} linear predictors",
            y.len(),
            eta.len()
        )));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument(
            "replicates must be at least 1".into(),
        ));
    }
    if let Some(&s) = y.iter().find(|&&s| s < 1 || s > th.n_stages()) {
        return Err(Error::InvalidArgument(format!(
            "stage {s} outside 1..={}",
            th.n_stages()
        )));
    }
    let n = y.len();
    let r: Vec<f64> = (0..n * replicates)
        .into_par_iter()
        .map(|j| {
            let i = j % n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let w: f64 = rng.sample(Open01);
            truncated_residual(eta[i], th.lower(y[i]), th.upper(y[i]), w)
        })
        .collect();
    Ok(SurrogateResiduals {
        seed,
        replicates,
        obs: (0..n * replicates).map(|j| j % n).collect(),
        replicate: (0..n * replicates).map(|j| j / n).collect(),
        stage: (0..n * replicates).map(|j| y[j % n]).collect(),
        eta: (0..n * replicates).map(|j| eta[j % n]).collect(),
        r,
    })
}

pub fn surrogate_residuals(
    fr: &FitResult,
    d: &Dataset,
    seed: u64,
    replicates: usize,
) -> Result<SurrogateResiduals> {
    if d.n_stages() != fr.n_stages() {
        return Err(Error::Schema(format!(
            "data has {} stages, model has {}",
            d.n_stages(),
            fr.n_stages()
        )));
    }
    let eta = fr.linear_predictor(d.frame())?;
    surrogate_from_eta(d.stages(), eta.as_slice(), &fr.thresholds, seed, replicates)
}

/// `(theoretical logistic quantile, sample quantile)` at plotting positions `(i − 0.5)/n`.
pub fn qq_logistic(r: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = r.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| (logit((i as f64 + 0.5) / n), s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub x: f64,
    pub r: f64,
    /// Centred running mean of `r` over a window of `n/20` points in `x` order.
    pub trend: f64,
}

/// Residuals against a covariate of `d` or against `"linear_predictor"`, sorted by `x`.
pub fn residual_plot_data(
    sr: &SurrogateResiduals,
    d: &Dataset,
    against: &str,
) -> Result<Vec<ResidualPoint>> {
    let x: Vec<f64> = if against == "linear_predictor" {
        sr.eta.clone()
    } else {
        let col = d.frame().covariate(against)?;
        sr.obs.iter().map(|&i| col[i]).collect()
    };
    Ok(running_mean_points(&x, &sr.r))
}

pub fn running_mean_points(x: &[f64], r: &[f64]) -> Vec<ResidualPoint> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let n = x.len();
    let window = (n / 20).max(1);
    let half = window / 2;
    let mut prefix = vec![0.0; n + 1];
    for (j, &i) in order.iter().enumerate() {
        prefix[j + 1] = prefix[j] + r[i];
    }
    order
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let lo = j.saturating_sub(half);
            let hi = (lo + window).min(n);
            let lo = hi.saturating_sub(window);
            ResidualPoint {
                x: x[i],
                r: r[i],
                trend: (prefix[hi] - prefix[lo]) / (hi - lo) as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test of `sample` against `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsTest {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let statistic = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    KsTest {
        statistic,
        p_value: kolmogorov_survival((sq + 0.12 + 0.11 / sq) * statistic),
    }
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    // The alternating series converges slowly near zero, where the survival is 1 to double precision.
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
