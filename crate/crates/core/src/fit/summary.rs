use std::fmt;

use serde::{Deserialize, Serialize};

use super::{coefficient_names, FitResult};
use crate::basis::TermBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRow {
    pub term: String,
    pub edf: f64,
    pub max_df: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

/// Report of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub formula: String,
    pub n: usize,
    pub n_stages: usize,
    pub stages: Vec<String>,
    pub parametric: Vec<CoefficientRow>,
    pub smooths: Vec<TermRow>,
    pub thresholds: Vec<f64>,
    pub edf_total: f64,
    pub loglik: f64,
    pub laml: f64,
    pub aic: f64,
    pub deviance_explained: f64,
    pub lambda_at_bound: Vec<bool>,
    pub outer_converged: bool,
}

pub fn summarize(fr: &FitResult) -> Summary {
    let names = coefficient_names(&fr.layout);
    let mut parametric = Vec::new();
    let mut smooths = Vec::new();
    for (t, e) in fr.layout.terms.iter().zip(&fr.edf) {
        match t.basis {
            TermBasis::Smooth(_) | TermBasis::FactorSmooth(_) => smooths.push(TermRow {
                term: t.label.clone(),
                edf: e.edf,
                max_df: t.ncols,
                lambdas: e.lambdas.clone(),
            }),
            _ => parametric.extend((t.offset..t.offset + t.ncols).map(|j| CoefficientRow {
                name: names[j].clone(),
                estimate: fr.beta[j],
                se: fr.vb[(j, j)].sqrt(),
            })),
        }
    }
    Summary {
        formula: fr.spec.to_string(),
        n: fr.n,
        n_stages: fr.n_stages(),
        stages: fr.coding.labels().to_vec(),
        parametric,
        smooths,
        thresholds: fr.thresholds.theta().to_vec(),
        edf_total: fr.edf_total,
        loglik: fr.loglik,
        laml: fr.laml,
        aic: fr.aic,
        deviance_explained: fr.deviance_explained,
        lambda_at_bound: fr.at_bound.clone(),
        outer_converged: fr.outer_converged,
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Family: ordered categorical, {} stages ({})",
            self.n_stages,
            self.stages.join(", ")
        )?;
        writeln!(f, "Formula: {}", self.formula)?;
        writeln!(f)?;
        if !self.parametric.is_empty() {
            writeln!(f, "Parametric coefficients:")?;
            let w = self
                .parametric
                .iter()
                .map(|r| r.name.len())
                .max()
                .unwrap_or(0)
                .max(4);
            writeln!(f, "{:<w$} {:>12} {:>12}", "", "Estimate", "Std. Error")?;
            for r in &self.parametric {
                writeln!(f, "{:<w$} {:>12.6} {:>12.6}", r.name, r.estimate, r.se)?;
            }
            writeln!(f)?;
        }
        if !self.smooths.is_empty() {
            writeln!(f, "Approximate significance of smooth terms:")?;
            let w = self
                .smooths
                .iter()
                .map(|r| r.term.len())
                .max()
                .unwrap_or(0)
                .max(4);
            writeln!(
                f,
                "{:<w$} {:>8} {:>7} {:>14}",
                "", "edf", "max.df", "lambda"
            )?;
            for r in &self.smooths {
                let lam: Vec<String> = r.lambdas.iter().map(|l| format!("{l:.4e}")).collect();
                writeln!(
                    f,
                    "{:<w$} {:>8.3} {:>7} {:>14}",
                    r.term,
                    r.edf,
                    r.max_df,
                    lam.join(" ")
                )?;
            }
            writeln!(f)?;
        }
        let th: Vec<String> = self.thresholds.iter().map(|t| format!("{t:.4}")).collect();
        writeln!(f, "Thresholds: {}", th.join(" "))?;
        writeln!(f, "Total edf = {:.3}   n = {}", self.edf_total, self.n)?;
        writeln!(
            f,
            "Log-likelihood = {:.4}   LAML = {:.4}",
            self.loglik, self.laml
        )?;
        writeln!(f, "AIC = {:.4}", self.aic)?;
        write!(
            f,
            "Deviance explained = {:.2}%",
            100.0 * self.deviance_explained
        )?;
        if self.lambda_at_bound.iter().any(|&b| b) {
            write!(
                f,
                "\nNote: at least one smoothing parameter is at its bound"
            )?;
        }
        if !self.outer_converged {
            write!(
                f,
                "\nNote: smoothing parameter search stopped before convergence"
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::assemble_design;
    use crate::data::{Dataset, Frame, StageCoding};
    use crate::fit::{optimize_lambdas, FitOptions};
    use crate::formula::parse_formula;

    #[test]
    fn summary_lists_terms_and_thresholds() {
        let n = 240;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 24.0).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        let y: Vec<usize> = x
            .iter()
            .zip(&w)
            .enumerate()
            .map(|(i, (a, b))| {
                let z = 1.5 * (a * 0.9).sin() + b + [-1.2, 0.4, 1.1, -0.3][i % 4];
                if z < -0.5 {
                    1
                } else if z < 0.4 {
                    2
                } else {
                    3
                }
            })
            .collect();
        let frame = Frame::new(n)
            .with_numeric("x", x)
            .unwrap()
            .with_numeric("w", w)
            .unwrap();
        let coding = StageCoding::new(["bud", "flower", "seed"]).unwrap();
        let d = Dataset::new("stage", coding, y, frame).unwrap();
        let m = assemble_design(&d, &parse_formula("stage ~ w + s(x, k=8)").unwrap()).unwrap();
        let fr = optimize_lambdas(&m, &FitOptions::default()).unwrap();
        let s = summarize(&fr);
        assert_eq!(s.parametric.len(), 2);
        assert_eq!(s.smooths.len(), 1);
        assert_eq!(s.thresholds.len(), 2);
        assert_eq!(s.thresholds[0], -1.0);
        let text = s.to_string();
        assert!(text.contains("s(x)"));
        assert!(text.contains("Deviance explained"));
        assert!(text.contains("bud, flower, seed"));
        let back: Summary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
