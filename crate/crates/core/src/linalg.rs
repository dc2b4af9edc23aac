//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Orthonormal basis (as columns) of the orthogonal complement of `a`'s column space.
///
/// `a` is `k × q` with full column rank; the result is `k × (k - q)`. Built from the
/// Householder factorisation `a = QR`, returning the trailing `k - q` columns of `Q`.
pub fn null_space_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, q) = a.shape();
    let mut r = a.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(q);
    for j in 0..q.min(k) {
        let x = r.view((j, j), (k - j, 1)).column(0).clone_owned();
        let alpha = x.norm();
        let mut v = x;
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
        }
        // R[j.., j..] -= 2 v (v' R[j.., j..])
        let mut block = r.view_mut((j, j), (k - j, q - j));
        let w = block.tr_mul(&v);
        block -= 2.0 * &v * w.transpose();
        reflectors.push(v);
    }
    // Q = H_1 H_2 ... H_q applied to the trailing identity columns.
    let mut z = DMatrix::<f64>::zeros(k, k - q);
    for c in 0..k - q {
        z[(q + c, c)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        let mut block = z.view_mut((j, 0), (k - j, k - q));
        let w = block.tr_mul(v);
        block -= 2.0 * v * w.transpose();
    }
    z
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `log|m|` for symmetric positive definite `m`.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let ch = cholesky(m).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = cholesky(m).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Log of the product of the `rank` largest eigenvalues (generalised determinant).
pub fn log_pseudo_det(m: &DMatrix<f64>, rank: usize) -> Result<f64> {
    let (vals, _) = sym_eigen_desc(m);
    if rank > vals.len() || (rank > 0 && vals[rank - 1] <= 0.0) {
        return Err(Error::Numeric(format!(
            "matrix does not have {rank} positive eigenvalues"
        )));
    }
    Ok(vals.iter().take(rank).map(|v| v.ln()).sum())
}

/// Maximum absolute row sum.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `Xᵀ diag(w) X`.
pub fn weighted_crossprod(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut wx = x.clone();
    for (mut row, &wi) in wx.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    let mut out = x.tr_mul(&wx);
    symmetrize(&mut out);
    out
}

/// Row-major matrix encoding used in JSON archives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|rc| m[rc])
            .collect();
        Self { rows, cols, data }
    }
}

impl TryFrom<RowMajor> for DMatrix<f64> {
    type Error = Error;
    fn try_from(r: RowMajor) -> Result<Self> {
        if r.data.len() != r.rows * r.cols {
            return Err(Error::Dimension(format!(
                "matrix declared {}x{} but holds {} values",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// `#[serde(with = "row_major")]` for `DMatrix<f64>` fields.
pub mod row_major {
    use super::*;

    pub fn serialize<S: Serializer>(
        m: &DMatrix<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        RowMajor::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DMatrix<f64>, D::Error> {
        let r = RowMajor::deserialize(d)?;
        DMatrix::try_from(r).map_err(serde::de::Error::custom)
    }
}
