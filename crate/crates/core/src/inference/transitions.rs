//! Threshold-crossing days, their densities, quantile days and rates of change.
//!
//! Crossings are located on a day grid: each sign change of `η(d) − θ_k` between
//! adjacent grid points yields one crossing, placed by linear interpolation. Up- and
//! down-crossings are both kept, so a curve that crosses a threshold twice gives two
//! samples.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::{quantile_sorted, PosteriorDraws};
use super::predict::{cumulative_from_eta, frame_along, Direction};
use crate::basis::TermBasis;
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::ocat::{category_probs, cumulative_leq, Thresholds};

/// Strictly increasing evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    values: Vec<f64>,
}

impl Grid {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "a grid needs at least 2 points".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "grid values must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `from, from + step, …` up to `to` inclusive (with a small tolerance).
    pub fn range(from: f64, to: f64, step: f64) -> Result<Self> {
        if step.is_nan() || step <= 0.0 || from.is_nan() || to.is_nan() || to <= from {
            return Err(Error::InvalidArgument(format!(
                "bad grid {from}:{to}:{step}"
            )));
        }
        let n = ((to - from) / step + 1e-9).floor() as usize;
        Self::from_values((0..=n).map(|i| from + i as f64 * step).collect())
    }

    /// Parses `from:to:step`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("grid {text:?} is not from:to:step")))?;
        match nums.as_slice() {
            [from, to, step] => Self::range(*from, *to, *step),
            _ => Err(Error::InvalidArgument(format!(
                "grid {text:?} is not from:to:step"
            ))),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest gap between adjacent points.
    pub fn spacing(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integer days spanning the training range of `var` in a smooth term.
pub fn default_grid(fr: &FitResult, var: &str) -> Result<Grid> {
    let range = fr.layout.terms.iter().find_map(|t| match &t.basis {
        TermBasis::Smooth(s) if s.var == var => Some(s.range),
        TermBasis::FactorSmooth(s) if s.var == var => Some(s.range),
        _ => None,
    });
    let (lo, hi) = range.ok_or_else(|| {
        Error::InvalidArgument(format!("no smooth of {var:?}; give an explicit grid"))
    })?;
    Grid::range(lo.ceil(), hi.floor(), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub day: f64,
    /// True when `η` rises through the threshold.
    pub upward: bool,
}

/// Every crossing of `level` by the piecewise-linear curve `(grid, eta)`.
pub fn find_crossings(grid: &[f64], eta: &[f64], level: f64) -> Vec<Crossing> {
    let above = |v: f64| v - level > 0.0;
    grid.windows(2)
        .zip(eta.windows(2))
        .filter(|(_, e)| above(e[0]) != above(e[1]))
        .map(|(g, e)| {
            let t = (level - e[0]) / (e[1] - e[0]);
            Crossing {
                day: g[0] + t * (g[1] - g[0]),
                upward: e[1] > e[0],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSamples {
    /// 1-based threshold index: crossing `θ_k` marks the change from stage `k` to `k + 1`.
    pub threshold: usize,
    /// Sorted crossing days pooled over draws.
    pub days: Vec<f64>,
    pub upward: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSamples {
    pub var: String,
    pub grid_from: f64,
    pub grid_to: f64,
    pub n_draws: usize,
    pub thresholds_sampled: bool,
    pub per_threshold: Vec<ThresholdSamples>,
}

/// Pools crossings of curve `j` (column of `etas`) with cut points `cuts(j)`.
fn pool_crossings(
    grid: &Grid,
    etas: &DMatrix<f64>,
    cuts: impl Fn(usize) -> Vec<f64> + Sync,
) -> Vec<ThresholdSamples> {
    let per_draw: Vec<Vec<Vec<Crossing>>> = (0..etas.ncols())
        .into_par_iter()
        .map(|j| {
            let eta: Vec<f64> = etas.column(j).iter().copied().collect();
            cuts(j)
                .iter()
                .map(|&t| find_crossings(grid.values(), &eta, t))
                .collect()
        })
        .collect();
    let m = per_draw.first().map_or(0, |d| d.len());
    (0..m)
        .map(|k| {
            let mut all: Vec<Crossing> =
                per_draw.iter().flat_map(|d| d[k].iter().copied()).collect();
            all.sort_by(|a, b| a.day.total_cmp(&b.day).then(a.upward.cmp(&b.upward)));
            ThresholdSamples {
                threshold: k + 1,
                days: all.iter().map(|c| c.day).collect(),
                upward: all.iter().map(|c| c.upward).collect(),
            }
        })
        .collect()
}

/// Crossing days of each threshold for each posterior draw, along `var` on `grid`.
///
/// Other covariates are held at the single row `fixed`. With `sample_thresholds`
/// off, every draw uses the fitted thresholds.
pub fn crossing_days(
    fr: &FitResult,
    draws: &PosteriorDraws,
    var: &str,
    grid: &Grid,
    fixed: Option<&Frame>,
    sample_thresholds: bool,
) -> Result<TransitionSamples> {
    let frame = frame_along(var, grid.values(), fixed)?;
    let x = fr.layout.prediction_matrix(&frame)?;
    let etas = &x * draws.beta_columns();
    let n = fr.n_stages();
    let thetas: Vec<Vec<f64>> = if sample_thresholds {
        (0..draws.n_draws())
            .map(|i| Thresholds::from_raw(&draws.raw(i), n).map(|t| t.theta().to_vec()))
            .collect::<Result<_>>()?
    } else {
        vec![fr.thresholds.theta().to_vec()]
    };
    let per_threshold = pool_crossings(grid, &etas, |j| {
        thetas[if sample_thresholds { j } else { 0 }].clone()
    });
    Ok(TransitionSamples {
        var: var.to_string(),
        grid_from: grid.values()[0],
        grid_to: *grid.values().last().unwrap(),
        n_draws: draws.n_draws(),
        thresholds_sampled: sample_thresholds,
        per_threshold,
    })
}

/// Crossings of fixed cut points by a single curve `η` on `grid`.
pub fn crossings_of_curve(grid: &Grid, eta: &[f64], theta: &[f64]) -> Vec<ThresholdSamples> {
    let etas = DMatrix::from_column_slice(eta.len(), 1, eta);
    pool_crossings(grid, &etas, |_| theta.to_vec())
}

/// Kernel density estimate and summary statistics of one threshold's crossing days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub threshold: usize,
    pub n_samples: usize,
    pub bandwidth: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub q025: Option<f64>,
    pub q50: Option<f64>,
    pub q975: Option<f64>,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`, falling back to whichever spread
/// is non-zero, and to a unit-scaled width for identical samples.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let iqr = (quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 1e-3 * mean.abs().max(1.0),
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian-kernel density of the samples on a grid over `[min - 4h, max + 4h]`.
pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples for a density".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::InvalidArgument(format!(
                "bandwidth {h} must be positive"
            )))
        }
        None => silverman_bandwidth(&sorted),
    };
    let lo = sorted[0] - 4.0 * h;
    let hi = sorted[sorted.len() - 1] + 4.0 * h;
    let points = (((hi - lo) / (h / 4.0)).ceil() as usize + 1).max(512);
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..points).map(|i| lo + i as f64 * step).collect();
    let density = x
        .par_iter()
        .map(|&xi| {
            // Samples beyond 9h contribute below e^-40 and are skipped.
            let start = sorted.partition_point(|&s| s < xi - 9.0 * h);
            let end = sorted.partition_point(|&s| s <= xi + 9.0 * h);
            norm * sorted[start..end]
                .iter()
                .map(|&s| (-0.5 * ((xi - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok((h, x, density))
}

pub fn transition_density(
    ts: &TransitionSamples,
    bandwidth: Option<f64>,
) -> Result<Vec<DensitySummary>> {
    ts.per_threshold
        .iter()
        .map(|t| {
            if t.days.is_empty() {
                return Ok(DensitySummary {
                    threshold: t.threshold,
                    n_samples: 0,
                    bandwidth: None,
                    mean: None,
                    sd: None,
                    q025: None,
                    q50: None,
                    q975: None,
                    x: Vec::new(),
                    density: Vec::new(),
                });
            }
            let (h, x, density) = kde(&t.days, bandwidth)?;
            let n = t.days.len() as f64;
            let mean = t.days.iter().sum::<f64>() / n;
            let sd = (n > 1.0).then(|| {
                (t.days.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            });
            Ok(DensitySummary {
                threshold: t.threshold,
                n_samples: t.days.len(),
                bandwidth: Some(h),
                mean: Some(mean),
                sd,
                q025: Some(quantile_sorted(&t.days, 0.025)),
                q50: Some(quantile_sorted(&t.days, 0.5)),
                q975: Some(quantile_sorted(&t.days, 0.975)),
                x,
                density,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileDay {
    pub day: f64,
    /// `P(Z ≥ k)` at `day`.
    pub achieved: f64,
}

/// Grid day minimizing `|P(Z ≥ k) − p|` given `P(Z ≥ k)` on the grid; ties go to the earliest day.
pub fn quantile_day_from_probs(grid: &Grid, probs: &[f64], p: f64) -> Result<QuantileDay> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "proportion {p} must lie in (0, 1)"
        )));
    }
    let mut best = 0;
    for (i, q) in probs.iter().enumerate() {
        if (q - p).abs() < (probs[best] - p).abs() {
            best = i;
        }
    }
    Ok(QuantileDay {
        day: grid.values()[best],
        achieved: probs[best],
    })
}

fn check_stage(fr: &FitResult, k: usize) -> Result<()> {
    if k < 1 || k > fr.n_stages() {
        return Err(Error::InvalidArgument(format!(
            "stage {k} outside 1..={}",
            fr.n_stages()
        )));
    }
    Ok(())
}

/// Day at which `P(Z ≥ k)` is closest to `p` along `var`.
pub fn quantile_day(
    fr: &FitResult,
    k: usize,
    p: f64,
    var: &str,
    grid: &Grid,
    fixed: Option<&Frame>,
) -> Result<QuantileDay> {
    check_stage(fr, k)?;
    let eta = fr.linear_predictor(&frame_along(var, grid.values(), fixed)?)?;
    let geq = cumulative_from_eta(eta.as_slice(), &fr.thresholds, Direction::Geq);
    let probs: Vec<f64> = geq.column(k - 1).iter().copied().collect();
    quantile_day_from_probs(grid, &probs, p)
}

/// Central-difference derivatives along a grid for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurves {
    pub x: Vec<f64>,
    pub step: f64,
    /// `d/dd P(Z = k)`, `len(x) × K`.
    #[serde(with = "crate::linalg::row_major")]
    pub category: DMatrix<f64>,
    /// `d/dd P(Z ≤ k)`, `len(x) × K`.
    #[serde(with = "crate::linalg::row_major")]
    pub cumulative: DMatrix<f64>,
}

/// Derivatives of stage probabilities for a linear predictor `eta(d)` evaluated pointwise.
pub fn rate_of_change_from_eta(
    grid: &Grid,
    th: &Thresholds,
    eta: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<RateCurves> {
    let h = grid.spacing();
    let up: Vec<f64> = grid.values().iter().map(|d| d + h).collect();
    let dn: Vec<f64> = grid.values().iter().map(|d| d - h).collect();
    let (eu, ed) = (eta(&up)?, eta(&dn)?);
    let k = th.n_stages();
    let g = grid.len();
    let mut category = DMatrix::zeros(g, k);
    let mut cumulative = DMatrix::zeros(g, k);
    for i in 0..g {
        let (pu, pd) = (category_probs(eu[i], th), category_probs(ed[i], th));
        let (cu, cd) = (cumulative_leq(eu[i], th), cumulative_leq(ed[i], th));
        for j in 0..k {
            category[(i, j)] = (pu[j] - pd[j]) / (2.0 * h);
            cumulative[(i, j)] = (cu[j] - cd[j]) / (2.0 * h);
        }
    }
    Ok(RateCurves {
        x: grid.values().to_vec(),
        step: h,
        category,
        cumulative,
    })
}

pub fn rate_of_change(
    fr: &FitResult,
    var: &str,
    grid: &Grid,
    fixed: Option<&Frame>,
) -> Result<RateCurves> {
    rate_of_change_from_eta(grid, &fr.thresholds, |d| {
        Ok(fr
            .linear_predictor(&frame_along(var, d, fixed)?)?
            .iter()
            .copied()
            .collect())
    })
}
