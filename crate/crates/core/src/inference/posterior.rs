use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::predict::row_se;
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::linalg::{cholesky, row_major};

/// Samples of `(β, a)` from `N((β̂, â), V_b)`, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub seed: u64,
    pub n_beta: usize,
    #[serde(with = "row_major")]
    pub params: DMatrix<f64>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.params.nrows()
    }

    pub fn beta(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.n_beta,
            self.params.row(i).iter().take(self.n_beta).copied(),
        )
    }

    pub fn raw(&self, i: usize) -> Vec<f64> {
        let m = self.params.ncols() - self.n_beta;
        self.params
            .view((i, self.n_beta), (1, m))
            .iter()
            .copied()
            .collect()
    }

    /// `p × n_draws` matrix of coefficient draws, one column per draw.
    pub fn beta_columns(&self) -> DMatrix<f64> {
        self.params.columns(0, self.n_beta).transpose()
    }
}

pub fn posterior_draws(fr: &FitResult, n_draws: usize, seed: u64) -> Result<PosteriorDraws> {
    let dim = fr.vb.nrows();
    let chol = cholesky(&fr.vb)
        .ok_or_else(|| Error::Numeric("posterior covariance is not positive definite".into()))?;
    let l = chol.l();
    let mean = fr.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DMatrix::zeros(n_draws, dim);
    for i in 0..n_draws {
        let z = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
        let draw = &mean + &l * z;
        params.set_row(i, &draw.transpose());
    }
    Ok(PosteriorDraws {
        seed,
        n_beta: fr.total_p(),
        params,
    })
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise band from the empirical quantiles of simulated linear predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBand {
    pub eta: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn simulation_band(
    fr: &FitResult,
    newdata: &Frame,
    draws: &PosteriorDraws,
    level: f64,
) -> Result<SimulationBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage level {level} must lie in (0, 1)"
        )));
    }
    if draws.n_draws() < 2 {
        return Err(Error::InvalidArgument(
            "a simulation band needs at least 2 draws".into(),
        ));
    }
    let x = fr.layout.prediction_matrix(newdata)?;
    let sims = &x * draws.beta_columns();
    let alpha = 1.0 - level;
    let mut lower = Vec::with_capacity(x.nrows());
    let mut upper = Vec::with_capacity(x.nrows());
    for row in sims.row_iter() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&v, alpha / 2.0));
        upper.push(quantile_sorted(&v, 1.0 - alpha / 2.0));
    }
    Ok(SimulationBand {
        eta: (&x * fr.beta_vector()).iter().copied().collect(),
        se: row_se(&x, &fr.vb_beta()),
        lower,
        upper,
    })
}
