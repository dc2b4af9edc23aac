use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_sz, build_tprs, DesignBlock, TermBasis};
use crate::data::{Dataset, Frame, StageCoding};
use crate::error::{Error, Result};
use crate::formula::{ModelSpec, Term};
use crate::linalg::{log_pseudo_det, row_major, sym_eigen_desc};

/// One penalty matrix embedded at `offset` in the coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub term: usize,
    pub offset: usize,
    #[serde(with = "row_major")]
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    /// Log generalised determinant of `matrix` over its range space.
    pub log_det: f64,
}

impl Penalty {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn support(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.matrix.row(i).iter().any(|&v| v != 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLayout {
    pub label: String,
    pub basis: TermBasis,
    pub offset: usize,
    pub ncols: usize,
    /// Null-space dimension of the term's summed penalties (`ncols` when unpenalized).
    pub nullspace_dim: usize,
    /// Indices into [`DesignLayout::penalties`].
    pub penalties: Vec<usize>,
    /// True when this term's penalties act on disjoint coefficient sets.
    pub separable: bool,
}

/// Everything needed to rebuild design rows and penalties, without the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub terms: Vec<TermLayout>,
    pub penalties: Vec<Penalty>,
    pub total_p: usize,
}

impl DesignLayout {
    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    /// `S_λ = Σ_j λ_j S_j` over all `total_p` coefficients.
    pub fn penalty_matrix(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.total_p, self.total_p);
        for (p, &l) in self.penalties.iter().zip(lambdas) {
            let d = p.dim();
            let mut block = s.view_mut((p.offset, p.offset), (d, d));
            block += &p.matrix * l;
        }
        s
    }

    /// Total dimension of the penalty null space over the coefficients.
    pub fn nullspace_dim(&self) -> usize {
        self.terms.iter().map(|t| t.nullspace_dim).sum()
    }

    /// `log|S_λ|₊` with `λ = exp(ρ)`.
    ///
    /// Terms whose penalties act on disjoint coefficients use the exact closed form
    /// `Σ_j rank_j ρ_j + log|S_j|₊`; overlapping penalties fall back to an
    /// eigendecomposition of the term's summed penalty.
    pub fn log_det_penalty(&self, rho: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            if t.penalties.is_empty() {
                continue;
            }
            if t.separable {
                for &j in &t.penalties {
                    let p = &self.penalties[j];
                    total += p.rank as f64 * rho[j] + p.log_det;
                }
            } else {
                let d = t.ncols;
                let mut s = DMatrix::zeros(d, d);
                for &j in &t.penalties {
                    s += &self.penalties[j].matrix * rho[j].exp();
                }
                total += log_pseudo_det(&s, d - t.nullspace_dim)?;
            }
        }
        Ok(total)
    }

    /// Linear-predictor design rows for `frame`.
    pub fn prediction_matrix(&self, frame: &Frame) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(frame.len(), self.total_p);
        for t in &self.terms {
            let block = t.basis.eval(frame)?;
            x.view_mut((0, t.offset), (frame.len(), t.ncols))
                .copy_from(&block);
        }
        Ok(x)
    }

    /// Covariates and factors the design reads.
    pub fn variables(&self) -> (Vec<String>, Vec<String>) {
        let mut numeric: Vec<String> = Vec::new();
        let mut factors: Vec<String> = Vec::new();
        let add = |v: &mut Vec<String>, s: &str| {
            if !v.iter().any(|x| x == s) {
                v.push(s.to_string());
            }
        };
        for t in &self.terms {
            match &t.basis {
                TermBasis::Intercept => {}
                TermBasis::Linear { name } => add(&mut numeric, name),
                TermBasis::Factor { name, .. } => add(&mut factors, name),
                TermBasis::Smooth(s) => add(&mut numeric, &s.var),
                TermBasis::FactorSmooth(s) => {
                    add(&mut numeric, &s.var);
                    add(&mut factors, &s.factor);
                }
            }
        }
        (numeric, factors)
    }
}

pub fn prediction_matrix(layout: &DesignLayout, frame: &Frame) -> Result<DMatrix<f64>> {
    layout.prediction_matrix(frame)
}

/// Training design plus response.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub spec: ModelSpec,
    pub layout: DesignLayout,
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
    pub n_stages: usize,
    pub coding: StageCoding,
}

impl ModelMatrices {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn total_p(&self) -> usize {
        self.layout.total_p
    }

    /// Number of free threshold parameters.
    pub fn n_raw(&self) -> usize {
        self.n_stages - 2
    }
}

fn unpenalized(label: String, basis: TermBasis) -> (String, DesignBlock) {
    let ncols = basis.ncols();
    (
        label,
        DesignBlock {
            x: DMatrix::zeros(0, ncols),
            penalties: Vec::new(),
            penalty_ranks: Vec::new(),
            nullspace_dim: ncols,
            basis,
        },
    )
}

fn numeric_var<'a>(frame: &'a Frame, name: &str) -> Result<&'a [f64]> {
    if frame.factor_column(name).is_some() {
        return Err(Error::Schema(format!(
            "{name:?} is a factor; smooths need a numeric covariate"
        )));
    }
    frame.covariate(name)
}

fn check_not_constant(name: &str, x: &[f64]) -> Result<()> {
    if x.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Dimension(format!(
            "covariate {name:?} is constant; it cannot carry a smooth"
        )));
    }
    Ok(())
}

/// Builds the intercept, parametric and smooth design blocks for `spec` on `d`.
///
/// Column order: intercept, parametric terms in formula order, then smooth terms in
/// formula order.
pub fn assemble_design(d: &Dataset, spec: &ModelSpec) -> Result<ModelMatrices> {
    if spec.response != d.stage_column() {
        return Err(Error::Schema(format!(
            "formula response {:?} does not match the stage column {:?}",
            spec.response,
            d.stage_column()
        )));
    }
    let frame = d.frame();
    let mut blocks: Vec<(String, DesignBlock)> =
        vec![unpenalized("(Intercept)".into(), TermBasis::Intercept)];

    for term in &spec.terms {
        if let Term::Linear { name } = term {
            let basis = if let Some(f) = frame.factor_column(name) {
                if f.levels.len() < 2 {
                    return Err(Error::Dimension(format!(
                        "factor {name:?} has a single level"
                    )));
                }
                TermBasis::Factor {
                    name: name.clone(),
                    levels: f.levels.clone(),
                }
            } else {
                frame.covariate(name)?;
                TermBasis::Linear { name: name.clone() }
            };
            blocks.push(unpenalized(term.label(), basis));
        }
    }
    for term in &spec.terms {
        match term {
            Term::Linear { .. } => {}
            Term::Smooth { var, k } => {
                let x = numeric_var(frame, var)?;
                check_not_constant(var, x)?;
                blocks.push((term.label(), build_tprs(var, x, *k)?));
            }
            Term::FactorSmooth { var, factor, k } => {
                let x = numeric_var(frame, var)?;
                check_not_constant(var, x)?;
                let f = frame.factor(factor)?;
                let labels: Vec<&str> = (0..frame.len()).map(|i| f.label(i)).collect();
                blocks.push((
                    term.label(),
                    build_sz(var, factor, x, &labels, &f.levels, *k)?,
                ));
            }
        }
    }

    let mut terms = Vec::with_capacity(blocks.len());
    let mut penalties = Vec::new();
    let mut offset = 0;
    for (ti, (label, block)) in blocks.into_iter().enumerate() {
        let ncols = block.basis.ncols();
        let mut idx = Vec::new();
        for (s, rank) in block.penalties.into_iter().zip(block.penalty_ranks) {
            let log_det = log_pseudo_det(&s, rank)?;
            idx.push(penalties.len());
            penalties.push(Penalty {
                term: ti,
                offset,
                matrix: s,
                rank,
                log_det,
            });
        }
        let supports: Vec<Vec<usize>> = idx.iter().map(|&j| penalties[j].support()).collect();
        let separable = supports.iter().enumerate().all(|(a, sa)| {
            supports[a + 1..]
                .iter()
                .all(|sb| sa.iter().all(|i| !sb.contains(i)))
        });
        if !separable && !idx.is_empty() {
            // Sanity check on the declared null space of overlapping penalties.
            let mut sum = DMatrix::zeros(ncols, ncols);
            for &j in &idx {
                sum += &penalties[j].matrix;
            }
            let (vals, _) = sym_eigen_desc(&sum);
            let rank = vals.iter().filter(|&&v| v > 1e-9 * vals[0]).count();
            if rank != ncols - block.nullspace_dim {
                return Err(Error::Numeric(format!(
                    "term {label} penalty rank {rank} disagrees with its null space"
                )));
            }
        }
        terms.push(TermLayout {
            label,
            basis: block.basis,
            offset,
            ncols,
            nullspace_dim: block.nullspace_dim,
            penalties: idx,
            separable,
        });
        offset += ncols;
    }
    let layout = DesignLayout {
        terms,
        penalties,
        total_p: offset,
    };
    let x = layout.prediction_matrix(frame)?;
    Ok(ModelMatrices {
        spec: spec.clone(),
        layout,
        x,
        y: d.stages().to_vec(),
        n_stages: d.n_stages(),
        coding: d.coding().clone(),
    })
}
