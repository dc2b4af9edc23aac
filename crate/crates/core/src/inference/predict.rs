use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::ocat::{category_probs, cumulative_geq, cumulative_leq, logistic_pdf, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPrediction {
    pub eta: Vec<f64>,
    pub se: Vec<f64>,
}

impl LinearPrediction {
    /// Pointwise band `η̂ ± z_{1-α/2} se` at coverage `level`.
    pub fn band(&self, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let z = normal_quantile(level)?;
        Ok((
            self.eta
                .iter()
                .zip(&self.se)
                .map(|(e, s)| e - z * s)
                .collect(),
            self.eta
                .iter()
                .zip(&self.se)
                .map(|(e, s)| e + z * s)
                .collect(),
        ))
    }
}

/// `z_{1-α/2}` for coverage `level = 1 - α`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage level {level} must lie in (0, 1)"
        )));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + 0.5 * level))
}

/// `se_i = sqrt(x_iᵀ V x_i)` for every row of `x`.
pub(crate) fn row_se(x: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    let xv = x * v;
    xv.row_iter()
        .zip(x.row_iter())
        .map(|(a, b)| a.dot(&b).max(0.0).sqrt())
        .collect()
}

pub fn predict_linear(fr: &FitResult, newdata: &Frame) -> Result<LinearPrediction> {
    let x = fr.layout.prediction_matrix(newdata)?;
    let eta = &x * fr.beta_vector();
    Ok(LinearPrediction {
        eta: eta.iter().copied().collect(),
        se: row_se(&x, &fr.vb_beta()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPrediction {
    /// `n × K` probabilities.
    pub probs: DMatrix<f64>,
    /// `n × K` delta-method standard errors with thresholds held fixed.
    pub se: DMatrix<f64>,
}

/// `∂P(Z = k)/∂η = f(θ_{k-1} - η) - f(θ_k - η)` for `k = 1..K`.
pub fn category_prob_slopes(eta: f64, th: &Thresholds) -> Vec<f64> {
    (1..=th.n_stages())
        .map(|k| {
            th.lower(k).map_or(0.0, |t| logistic_pdf(t - eta))
                - th.upper(k).map_or(0.0, |t| logistic_pdf(t - eta))
        })
        .collect()
}

/// Category probabilities and delta-method SEs from a linear prediction.
pub fn category_from_linear(lp: &LinearPrediction, th: &Thresholds) -> CategoryPrediction {
    let n = lp.eta.len();
    let k = th.n_stages();
    let mut probs = DMatrix::zeros(n, k);
    let mut se = DMatrix::zeros(n, k);
    for (i, (&e, &s)) in lp.eta.iter().zip(&lp.se).enumerate() {
        for (j, p) in category_probs(e, th).into_iter().enumerate() {
            probs[(i, j)] = p;
        }
        for (j, d) in category_prob_slopes(e, th).into_iter().enumerate() {
            se[(i, j)] = d.abs() * s;
        }
    }
    CategoryPrediction { probs, se }
}

pub fn predict_category(fr: &FitResult, newdata: &Frame) -> Result<CategoryPrediction> {
    Ok(category_from_linear(
        &predict_linear(fr, newdata)?,
        &fr.thresholds,
    ))
}

/// Category probabilities for arbitrary coefficients and raw thresholds.
pub fn predict_category_at(
    fr: &FitResult,
    newdata: &Frame,
    beta: &DVector<f64>,
    raw: &[f64],
) -> Result<DMatrix<f64>> {
    let th = Thresholds::from_raw(raw, fr.n_stages())?;
    let eta = fr.layout.prediction_matrix(newdata)? * beta;
    let k = th.n_stages();
    let mut out = DMatrix::zeros(eta.len(), k);
    for (i, &e) in eta.iter().enumerate() {
        for (j, p) in category_probs(e, &th).into_iter().enumerate() {
            out[(i, j)] = p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `P(Z ≤ k)`.
    Leq,
    /// `P(Z ≥ k)`.
    Geq,
}

pub fn cumulative_from_eta(eta: &[f64], th: &Thresholds, direction: Direction) -> DMatrix<f64> {
    let k = th.n_stages();
    let mut out = DMatrix::zeros(eta.len(), k);
    for (i, &e) in eta.iter().enumerate() {
        let row = match direction {
            Direction::Leq => cumulative_leq(e, th),
            Direction::Geq => cumulative_geq(e, th),
        };
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// `n × K` cumulative probabilities.
pub fn predict_cumulative(
    fr: &FitResult,
    newdata: &Frame,
    direction: Direction,
) -> Result<DMatrix<f64>> {
    let eta = fr.linear_predictor(newdata)?;
    Ok(cumulative_from_eta(
        eta.as_slice(),
        &fr.thresholds,
        direction,
    ))
}

/// Observed cumulative stage proportions `P(Z ≤ k)` in `bins` equal-width bins of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBin {
    pub centre: f64,
    pub count: usize,
    pub cumulative: Vec<f64>,
}

pub fn empirical_cumulative(
    x: &[f64],
    stages: &[usize],
    n_stages: usize,
    bins: usize,
) -> Result<Vec<EmpiricalBin>> {
    if bins == 0 || x.is_empty() || x.len() != stages.len() {
        return Err(Error::InvalidArgument(
            "need matching non-empty x and stages and at least one bin".into(),
        ));
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![vec![0usize; n_stages]; bins];
    for (&v, &s) in x.iter().zip(stages) {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b][s - 1] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().sum::<usize>() > 0)
        .map(|(b, c)| {
            let total: usize = c.iter().sum();
            let mut acc = 0;
            EmpiricalBin {
                centre: lo + (b as f64 + 0.5) * width,
                count: total,
                cumulative: c
                    .iter()
                    .map(|n| {
                        acc += n;
                        acc as f64 / total as f64
                    })
                    .collect(),
            }
        })
        .collect())
}

/// `n` copies of the single row of `fixed` with `var` set to each value of `values`.
pub fn frame_along(var: &str, values: &[f64], fixed: Option<&Frame>) -> Result<Frame> {
    let mut f = match fixed {
        Some(row) => {
            if row.len() != 1 {
                return Err(Error::Dimension(format!(
                    "fixed covariates must be a single row, got {}",
                    row.len()
                )));
            }
            if row.has_column(var) {
                return Err(Error::InvalidArgument(format!(
                    "{var:?} is both the grid variable and a fixed covariate"
                )));
            }
            row.select_rows(&vec![0; values.len()])
        }
        None => Frame::new(values.len()),
    };
    f.push_numeric(var, values.to_vec())?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes_sum_to_zero_and_match_differences() {
        let th = Thresholds::from_theta(&[-1.0, 0.3, 2.0]).unwrap();
        for eta in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let d = category_prob_slopes(eta, &th);
            assert!(d.iter().sum::<f64>().abs() < 1e-15);
            let h = 1e-6;
            let (up, dn) = (category_probs(eta + h, &th), category_probs(eta - h, &th));
            for j in 0..4 {
                assert!(((up[j] - dn[j]) / (2.0 * h) - d[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cumulative_boundaries_and_complements() {
        let th = Thresholds::from_theta(&[-1.0, 0.0, 1.5]).unwrap();
        let eta = [-2.0, 0.0, 0.7, 3.0];
        let leq = cumulative_from_eta(&eta, &th, Direction::Leq);
        let geq = cumulative_from_eta(&eta, &th, Direction::Geq);
        for i in 0..eta.len() {
            assert_eq!(leq[(i, 3)], 1.0);
            assert_eq!(geq[(i, 0)], 1.0);
            for k in 0..3 {
                assert!(leq[(i, k)] <= leq[(i, k + 1)]);
                assert!((leq[(i, k)] + geq[(i, k + 1)] - 1.0).abs() < 1e-12);
            }
        }
        let at = cumulative_from_eta(&[0.0], &th, Direction::Leq);
        assert_eq!(at[(0, 1)], 0.5);
    }

    #[test]
    fn band_uses_normal_quantile() {
        let lp = LinearPrediction {
            eta: vec![1.0],
            se: vec![2.0],
        };
        let (lo, hi) = lp.band(0.95).unwrap();
        assert!((hi[0] - 1.0 - 2.0 * 1.959_963_984_540_054).abs() < 1e-9);
        assert!((lo[0] + hi[0] - 2.0).abs() < 1e-12);
        assert!(lp.band(1.0).is_err());
    }

    #[test]
    fn empirical_bins() {
        let x = [0.0, 0.1, 0.9, 1.0];
        let y = [1, 2, 2, 3];
        let b = empirical_cumulative(&x, &y, 3, 2).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].cumulative, vec![0.5, 1.0, 1.0]);
        assert_eq!(b[1].cumulative, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn frame_along_replicates_fixed_row() {
        let fixed = Frame::new(1).with_factor("Site", &["b"]).unwrap();
        let f = frame_along("doy", &[1.0, 2.0, 3.0], Some(&fixed)).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.factor("Site").unwrap().label(2), "b");
        assert!(frame_along("Site", &[1.0], Some(&fixed)).is_err());
    }
}
