//! One-dimensional thin-plate regression splines (second-order penalty).
//!
//! The full thin-plate spline with a knot at each unique covariate value uses the
//! radial function `η(r) = r³/12` plus the null space `{1, x}`. The radial kernel
//! matrix is eigen-truncated to its `k - 2` dominant directions that also satisfy the
//! side condition `Tᵀδ = 0`, giving a rank-reduced basis of `k` columns.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{null_space_basis, row_major, symmetrize};

/// Knots are placed at unique values up to this multiple of `k`.
const KNOT_MULTIPLE: usize = 10;

#[inline]
fn radial(r: f64) -> f64 {
    let r = r.abs();
    r * r * r / 12.0
}

/// Evaluation metadata for a rank-reduced thin-plate basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprsBasis {
    pub k: usize,
    /// Covariates are mapped to `(x - center) / scale` before evaluation.
    pub center: f64,
    pub scale: f64,
    /// Standardised knot locations.
    pub knots: Vec<f64>,
    /// `n_knots × (k - 2)` map from the truncated coefficients to knot weights.
    #[serde(with = "row_major")]
    pub radial_map: DMatrix<f64>,
}

/// Sorted unique values of `x`.
pub(crate) fn unique_sorted(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    u.dedup();
    u
}

impl TprsBasis {
    /// Builds the basis and its (unscaled) `k × k` wiggliness penalty.
    ///
    /// Column order of the basis is `k - 2` radial columns, then `1`, then `x`.
    pub fn build(x: &[f64], k: usize) -> Result<(Self, DMatrix<f64>)> {
        if k < 3 {
            return Err(Error::Dimension(format!(
                "basis size k={k} must be at least 3"
            )));
        }
        let unique = unique_sorted(x);
        if unique.len() < 2 {
            return Err(Error::Dimension(
                "covariate is constant; it cannot carry a smooth".into(),
            ));
        }
        if k > unique.len() {
            return Err(Error::Dimension(format!(
                "basis size k={k} exceeds the {} unique covariate values",
                unique.len()
            )));
        }
        let knots_raw: Vec<f64> = if unique.len() <= KNOT_MULTIPLE * k {
            unique
        } else {
            let m = KNOT_MULTIPLE * k;
            let last = unique.len() - 1;
            (0..m)
                .map(|i| unique[((i * last) as f64 / (m - 1) as f64).round() as usize])
                .collect()
        };
        let (lo, hi) = (knots_raw[0], knots_raw[knots_raw.len() - 1]);
        let center = 0.5 * (lo + hi);
        let scale = 0.5 * (hi - lo);
        let knots: Vec<f64> = knots_raw.iter().map(|v| (v - center) / scale).collect();
        let nk = knots.len();

        let e = DMatrix::from_fn(nk, nk, |i, j| radial(knots[i] - knots[j]));
        let eig = SymmetricEigen::new(e);
        let mut order: Vec<usize> = (0..nk).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
            vb.abs()
                .partial_cmp(&va.abs())
                .unwrap_or(Ordering::Equal)
                .then(vb.partial_cmp(&va).unwrap_or(Ordering::Equal))
                .then(a.cmp(&b))
        });
        let top = &order[..k];
        let u_k = DMatrix::from_fn(nk, k, |r, c| eig.eigenvectors[(r, top[c])]);
        let d_k = DVector::from_iterator(k, top.iter().map(|&i| eig.eigenvalues[i]));

        // Side condition Tᵀ U_k δ̃ = 0 with T = [1, x] at the knots.
        let t = DMatrix::from_fn(nk, 2, |r, c| if c == 0 { 1.0 } else { knots[r] });
        let z = null_space_basis(&u_k.tr_mul(&t));
        let radial_map = &u_k * &z;
        let mut s_radial = z.transpose() * DMatrix::from_diagonal(&d_k) * &z;
        symmetrize(&mut s_radial);

        let mut penalty = DMatrix::zeros(k, k);
        penalty
            .view_mut((0, 0), (k - 2, k - 2))
            .copy_from(&s_radial);

        Ok((
            Self {
                k,
                center,
                scale,
                knots,
                radial_map,
            },
            penalty,
        ))
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    /// Writes the `k` basis values at `x` into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let z = (x - self.center) / self.scale;
        let r = self.k - 2;
        out[..r].iter_mut().for_each(|v| *v = 0.0);
        for (j, &knot) in self.knots.iter().enumerate() {
            let e = radial(z - knot);
            if e == 0.0 {
                continue;
            }
            for (c, o) in out[..r].iter_mut().enumerate() {
                *o += e * self.radial_map[(j, c)];
            }
        }
        out[r] = 1.0;
        out[r + 1] = z;
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(x.len(), self.k);
        let mut row = vec![0.0; self.k];
        for (i, &v) in x.iter().enumerate() {
            self.eval_into(v, &mut row);
            for (c, &b) in row.iter().enumerate() {
                m[(i, c)] = b;
            }
        }
        m
    }

    /// Indices of the unpenalized `{1, x}` columns.
    pub fn null_columns(&self) -> [usize; 2] {
        [self.k - 2, self.k - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen_desc;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 150.0 + 3.0 * i as f64).collect()
    }

    /// Penalized least squares `min |y - Xb|² + λ bᵀSb`, solved directly.
    fn pls(x: &DMatrix<f64>, s: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let a = x.tr_mul(x) + s * lambda;
        a.lu().solve(&x.tr_mul(y)).unwrap()
    }

    #[test]
    fn shape_and_penalty_rank() {
        let x = grid(29);
        let (b, s) = TprsBasis::build(&x, 25).unwrap();
        assert_eq!(b.eval(&x).shape(), (29, 25));
        let (vals, _) = sym_eigen_desc(&s);
        let tol = 1e-9 * vals[0];
        assert_eq!(vals.iter().filter(|&&v| v > tol).count(), 23);
        assert!(vals.iter().all(|&v| v > -1e-10 * vals[0]));
        assert_eq!((&s - s.transpose()).amax(), 0.0);
    }

    #[test]
    fn too_large_basis_names_limit() {
        let x = grid(29);
        match TprsBasis::build(&x, 30) {
            Err(Error::Dimension(msg)) => assert!(msg.contains("29")),
            other => panic!("expected dimension error, got {other:?}"),
        }
        assert!(TprsBasis::build(&[3.0; 10], 3).is_err());
    }

    #[test]
    fn radial_part_has_no_polynomial_component_at_knots() {
        // Tᵀδ = 0: radial columns weighted at the knots are orthogonal to {1, x}.
        let x = grid(40);
        let (b, _) = TprsBasis::build(&x, 12).unwrap();
        let t = DMatrix::from_fn(
            b.knots.len(),
            2,
            |r, c| if c == 0 { 1.0 } else { b.knots[r] },
        );
        assert!(t.tr_mul(&b.radial_map).amax() < 1e-12);
    }

    #[test]
    fn infinite_penalty_reproduces_straight_line() {
        // Oracle: ordinary least squares on {1, x}.
        let x = grid(30);
        let y = DVector::from_iterator(x.len(), x.iter().map(|v| 2.0 - 0.05 * v));
        let (b, s) = TprsBasis::build(&x, 10).unwrap();
        let xm = b.eval(&x);
        let coef = pls(&xm, &s, &y, 1e12);
        let fitted = &xm * coef;
        let t = DMatrix::from_fn(x.len(), 2, |r, c| if c == 0 { 1.0 } else { x[r] });
        let ols = t.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let line = t * ols;
        assert!((fitted - line).amax() < 1e-6);
    }

    #[test]
    fn knots_subsampled_for_many_unique_values() {
        let x: Vec<f64> = (0..500).map(|i| i as f64 * 0.37).collect();
        let (b, _) = TprsBasis::build(&x, 5).unwrap();
        assert_eq!(b.knots.len(), 50);
        assert_eq!(b.knots[0], -1.0);
        assert_eq!(b.knots[49], 1.0);
    }
}
