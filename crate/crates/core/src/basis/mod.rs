//! Spline bases, penalties and identifiability constraints.

mod design;
pub mod tprs;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, norm_one, null_space_basis, row_major, symmetrize};

pub use design::{
    assemble_design, prediction_matrix, DesignLayout, ModelMatrices, Penalty, TermLayout,
};
pub use tprs::TprsBasis;

/// Smooth of one covariate, centred so its column sums over the training rows vanish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBasis {
    pub var: String,
    pub tprs: TprsBasis,
    /// `k × (k - 1)` map absorbing the sum-to-zero constraint.
    #[serde(with = "row_major")]
    pub constraint: DMatrix<f64>,
    /// Training covariate range.
    pub range: (f64, f64),
}

impl SmoothBasis {
    pub fn ncols(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        self.tprs.eval(x) * &self.constraint
    }
}

/// Per-level smooth deviations that sum to zero across factor levels at every `x`.
///
/// Level `g`'s curve is `f_g(x) = Σ_c C[g, c] B(x) γ_c` where `B` is the unconstrained
/// thin-plate basis and `C` is an orthonormal sum-to-zero contrast (`G × (G-1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSmoothBasis {
    pub var: String,
    pub factor: String,
    pub levels: Vec<String>,
    pub tprs: TprsBasis,
    #[serde(with = "row_major")]
    pub contrast: DMatrix<f64>,
    pub range: (f64, f64),
}

impl FactorSmoothBasis {
    pub fn ncols(&self) -> usize {
        (self.levels.len() - 1) * self.tprs.k
    }

    pub fn level_index(&self, label: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnseenLevel {
                factor: self.factor.clone(),
                level: label.to_string(),
            })
    }

    /// Design rows for covariate values `x` at level indices `level`.
    pub fn eval(&self, x: &[f64], level: &[usize]) -> DMatrix<f64> {
        let k = self.tprs.k;
        let mut m = DMatrix::zeros(x.len(), self.ncols());
        let mut row = vec![0.0; k];
        for (i, (&xi, &g)) in x.iter().zip(level).enumerate() {
            self.tprs.eval_into(xi, &mut row);
            for c in 0..self.levels.len() - 1 {
                let w = self.contrast[(g, c)];
                for (j, &b) in row.iter().enumerate() {
                    m[(i, c * k + j)] = w * b;
                }
            }
        }
        m
    }

    /// Every level's curve at `x` for block coefficients `coef`; one column per level.
    pub fn level_curves(&self, coef: &[f64], x: &[f64]) -> DMatrix<f64> {
        let g = self.levels.len();
        let mut out = DMatrix::zeros(x.len(), g);
        for level in 0..g {
            let xm = self.eval(x, &vec![level; x.len()]);
            let f = xm * nalgebra::DVector::from_column_slice(coef);
            out.set_column(level, &f);
        }
        out
    }
}

/// How a model term maps covariates to design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermBasis {
    Intercept,
    Linear {
        name: String,
    },
    /// Treatment-coded dummies; the first level is the reference.
    Factor {
        name: String,
        levels: Vec<String>,
    },
    Smooth(SmoothBasis),
    FactorSmooth(FactorSmoothBasis),
}

impl TermBasis {
    pub fn ncols(&self) -> usize {
        match self {
            TermBasis::Intercept | TermBasis::Linear { .. } => 1,
            TermBasis::Factor { levels, .. } => levels.len() - 1,
            TermBasis::Smooth(s) => s.ncols(),
            TermBasis::FactorSmooth(s) => s.ncols(),
        }
    }

    /// Design columns of this term for every row of `frame`.
    pub fn eval(&self, frame: &Frame) -> Result<DMatrix<f64>> {
        let n = frame.len();
        Ok(match self {
            TermBasis::Intercept => DMatrix::from_element(n, 1, 1.0),
            TermBasis::Linear { name } => DMatrix::from_column_slice(n, 1, frame.covariate(name)?),
            TermBasis::Factor { name, levels } => {
                let f = frame.factor(name)?;
                let mut m = DMatrix::zeros(n, levels.len() - 1);
                for i in 0..n {
                    let label = f.label(i);
                    let g = levels.iter().position(|l| l == label).ok_or_else(|| {
                        Error::UnseenLevel {
                            factor: name.clone(),
                            level: label.to_string(),
                        }
                    })?;
                    if g > 0 {
                        m[(i, g - 1)] = 1.0;
                    }
                }
                m
            }
            TermBasis::Smooth(s) => s.eval(frame.covariate(&s.var)?),
            TermBasis::FactorSmooth(s) => {
                let f = frame.factor(&s.factor)?;
                let level = (0..n)
                    .map(|i| s.level_index(f.label(i)))
                    .collect::<Result<Vec<_>>>()?;
                s.eval(frame.covariate(&s.var)?, &level)
            }
        })
    }
}

/// A term's training design columns with its penalties.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    pub x: DMatrix<f64>,
    /// Scaled penalty matrices over this block's columns.
    pub penalties: Vec<DMatrix<f64>>,
    pub penalty_ranks: Vec<usize>,
    /// Dimension of the null space of the summed penalties.
    pub nullspace_dim: usize,
    pub basis: TermBasis,
}

/// Rescales `s` so its 1-norm matches the squared ∞-norm of the block's design.
fn scale_penalty(mut s: DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let target = norm_inf(x).powi(2);
    let current = norm_one(&s);
    if current > 0.0 && target > 0.0 {
        s *= target / current;
    }
    symmetrize(&mut s);
    s
}

fn range_of(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Thin-plate regression spline of `x` with the sum-to-zero constraint absorbed.
pub fn build_tprs(var: &str, x: &[f64], k: usize) -> Result<DesignBlock> {
    let (tprs, penalty) = TprsBasis::build(x, k)?;
    let raw = tprs.eval(x);
    let sums = DMatrix::from_iterator(k, 1, raw.row_sum().iter().copied());
    let constraint = null_space_basis(&sums);
    let basis = SmoothBasis {
        var: var.to_string(),
        tprs,
        constraint,
        range: range_of(x),
    };
    let xm = basis.eval(x);
    let s = basis.constraint.transpose() * penalty * &basis.constraint;
    let s = scale_penalty(s, &xm);
    Ok(DesignBlock {
        x: xm,
        penalties: vec![s],
        penalty_ranks: vec![k - 2],
        nullspace_dim: 1,
        basis: TermBasis::Smooth(basis),
    })
}

/// Orthonormal contrasts: `G × (G-1)`, columns orthogonal to the ones vector.
pub fn sum_to_zero_contrast(g: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(g, g - 1);
    for j in 0..g - 1 {
        let m = (j + 1) as f64;
        let norm = (m * (m + 1.0)).sqrt();
        for i in 0..=j {
            c[(i, j)] = 1.0 / norm;
        }
        c[(j + 1, j)] = -m / norm;
    }
    c
}

/// Factor-smooth deviations of `x` by factor levels `labels`.
pub fn build_sz(
    var: &str,
    factor: &str,
    x: &[f64],
    labels: &[&str],
    levels: &[String],
    k: usize,
) -> Result<DesignBlock> {
    let g = levels.len();
    if g < 2 {
        return Err(Error::Dimension(format!(
            "factor {factor:?} has {g} level(s); a factor smooth needs at least 2"
        )));
    }
    let (tprs, wiggle) = TprsBasis::build(x, k)?;
    let basis = FactorSmoothBasis {
        var: var.to_string(),
        factor: factor.to_string(),
        levels: levels.to_vec(),
        tprs,
        contrast: sum_to_zero_contrast(g),
        range: range_of(x),
    };
    let level = labels
        .iter()
        .map(|l| basis.level_index(l))
        .collect::<Result<Vec<_>>>()?;
    let xm = basis.eval(x, &level);

    let mut ridge = DMatrix::zeros(k, k);
    for c in basis.tprs.null_columns() {
        ridge[(c, c)] = 1.0;
    }
    let reps = g - 1;
    let kron = |s: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(reps * k, reps * k);
        for r in 0..reps {
            out.view_mut((r * k, r * k), (k, k)).copy_from(s);
        }
        out
    };
    Ok(DesignBlock {
        penalties: vec![
            scale_penalty(kron(&wiggle), &xm),
            scale_penalty(kron(&ridge), &xm),
        ],
        penalty_ranks: vec![reps * (k - 2), reps * 2],
        nullspace_dim: 0,
        x: xm,
        basis: TermBasis::FactorSmooth(basis),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen_desc;
    use nalgebra::DVector;

    fn doy() -> Vec<f64> {
        (0..29).map(|i| 152.0 + 4.0 * i as f64).collect()
    }

    #[test]
    fn absorbed_smooth_has_zero_column_sums() {
        let x: Vec<f64> = doy().iter().cycle().take(200).copied().collect();
        let b = build_tprs("doy", &x, 25).unwrap();
        assert_eq!(b.x.ncols(), 24);
        let scale = b.x.amax();
        assert!(b.x.row_sum().amax() < 1e-10 * scale.max(1.0) * 200.0);
        for s in &b.penalties {
            assert!((s - s.transpose()).amax() < 1e-12);
            let (vals, _) = sym_eigen_desc(s);
            assert!(vals[vals.len() - 1] >= -1e-8);
            let tol = 1e-9 * vals[0];
            assert_eq!(
                vals.iter().filter(|&&v| v > tol).count(),
                24 - b.nullspace_dim
            );
        }
    }

    #[test]
    fn contrast_is_orthonormal_and_sums_to_zero() {
        for g in 2..6 {
            let c = sum_to_zero_contrast(g);
            assert!((c.tr_mul(&c) - DMatrix::identity(g - 1, g - 1)).amax() < 1e-14);
            assert!(c.row_sum().amax() < 1e-14);
        }
    }

    #[test]
    fn factor_smooth_levels_sum_to_zero() {
        let x: Vec<f64> = doy().iter().cycle().take(90).copied().collect();
        let labels: Vec<&str> = (0..90).map(|i| ["a", "b", "c"][i % 3]).collect();
        let levels = vec!["a".to_string(), "b".into(), "c".into()];
        let b = build_sz("doy", "Site", &x, &labels, &levels, 8).unwrap();
        assert_eq!(b.x.ncols(), 16);
        let TermBasis::FactorSmooth(fs) = &b.basis else {
            panic!()
        };
        let coef: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let grid: Vec<f64> = (0..50).map(|i| 140.0 + 3.3 * i as f64).collect();
        let curves = fs.level_curves(&coef, &grid);
        assert!(curves.column_sum().amax() < 1e-10);
        assert!(curves.amax() > 0.1);

        // The summed penalties are full rank.
        let total = &b.penalties[0] + &b.penalties[1];
        let (vals, _) = sym_eigen_desc(&total);
        assert!(vals[vals.len() - 1] > 1e-9 * vals[0]);
    }

    #[test]
    fn single_level_factor_rejected() {
        let x = doy();
        let labels = vec!["a"; x.len()];
        assert!(build_sz("doy", "Site", &x, &labels, &["a".to_string()], 5).is_err());
    }

    #[test]
    fn constraint_absorption_matches_explicit_constraint() {
        // Oracle: penalized least squares on [1, B] subject to 1ᵀ B β_s = 0 via the KKT system.
        let x: Vec<f64> = (0..60)
            .map(|i| (i as f64 * 0.37).sin() * 10.0 + i as f64)
            .collect();
        let y = DVector::from_iterator(60, x.iter().map(|v| (v / 8.0).cos() + 0.02 * v));
        let k = 8;
        let lambda = 0.3;
        let (tprs, s_raw) = TprsBasis::build(&x, k).unwrap();
        let b = tprs.eval(&x);
        let n = x.len();

        let mut full = DMatrix::zeros(n, k + 1);
        full.column_mut(0).fill(1.0);
        full.view_mut((0, 1), (n, k)).copy_from(&b);
        let mut pen = DMatrix::zeros(k + 1, k + 1);
        pen.view_mut((1, 1), (k, k)).copy_from(&s_raw);
        let mut kkt = DMatrix::zeros(k + 2, k + 2);
        kkt.view_mut((0, 0), (k + 1, k + 1))
            .copy_from(&(full.tr_mul(&full) + &pen * lambda));
        let sums = b.row_sum();
        for j in 0..k {
            kkt[(k + 1, j + 1)] = sums[j];
            kkt[(j + 1, k + 1)] = sums[j];
        }
        let mut rhs = DVector::zeros(k + 2);
        rhs.rows_mut(0, k + 1).copy_from(&full.tr_mul(&y));
        let sol = kkt.lu().solve(&rhs).unwrap();
        let fitted_oracle = &full * sol.rows(0, k + 1);

        let z = null_space_basis(&DMatrix::from_iterator(k, 1, sums.iter().copied()));
        let bc = &b * &z;
        let mut xc = DMatrix::zeros(n, k);
        xc.column_mut(0).fill(1.0);
        xc.view_mut((0, 1), (n, k - 1)).copy_from(&bc);
        let mut pc = DMatrix::zeros(k, k);
        pc.view_mut((1, 1), (k - 1, k - 1))
            .copy_from(&(z.transpose() * &s_raw * &z));
        let coef = (xc.tr_mul(&xc) + pc * lambda)
            .lu()
            .solve(&xc.tr_mul(&y))
            .unwrap();
        let fitted = &xc * coef;
        assert!((fitted - fitted_oracle).amax() < 1e-8);
    }
}
