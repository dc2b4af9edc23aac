//! Ordered-categorical data from a known linear predictor and thresholds.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::data::{write_dataset, Dataset, Frame, StageCoding};
use crate::error::{Error, Result};
use crate::ocat::{logit, Thresholds};

/// Analytic linear predictor families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EtaFunction {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `offset + amplitude · sin((x − shift) / scale)`.
    Sine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Natural cubic spline interpolating `values` at `knots`.
    Spline {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
    /// `base(x) + deviations[level](x)`, one deviation per factor level.
    PerLevel {
        base: Box<EtaFunction>,
        deviations: Vec<EtaFunction>,
    },
}

impl EtaFunction {
    /// Value at `x` for factor level index `level` (ignored except by `PerLevel`).
    pub fn eval(&self, x: f64, level: usize) -> f64 {
        match self {
            EtaFunction::Constant { value } => *value,
            EtaFunction::Linear { intercept, slope } => intercept + slope * x,
            EtaFunction::Sine {
                offset,
                amplitude,
                scale,
                shift,
            } => offset + amplitude * ((x - shift) / scale).sin(),
            EtaFunction::Spline { knots, values } => natural_spline(knots, values, x),
            EtaFunction::PerLevel { base, deviations } => {
                base.eval(x, level) + deviations[level].eval(x, level)
            }
        }
    }

    fn validate(&self, levels: usize) -> Result<()> {
        match self {
            EtaFunction::Sine { scale, .. } if *scale == 0.0 => {
                Err(Error::InvalidArgument("sine scale must be non-zero".into()))
            }
            EtaFunction::Spline { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return Err(Error::InvalidArgument(
                        "spline needs at least 2 knots with one value each".into(),
                    ));
                }
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument(
                        "spline knots must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            EtaFunction::PerLevel { base, deviations } => {
                if deviations.len() != levels {
                    return Err(Error::InvalidArgument(format!(
                        "{} deviations for {levels} factor levels",
                        deviations.len()
                    )));
                }
                base.validate(levels)?;
                deviations.iter().try_for_each(|d| d.validate(levels))
            }
            _ => Ok(()),
        }
    }

    fn needs_factor(&self) -> bool {
        matches!(self, EtaFunction::PerLevel { .. })
    }
}

/// Natural cubic spline through `(knots, values)`, linear beyond the end knots.
fn natural_spline(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    let m = second_derivatives(knots, values);
    if x <= knots[0] || x >= knots[n - 1] {
        let (i, j) = if x <= knots[0] {
            (0, 1)
        } else {
            (n - 2, n - 1)
        };
        let h = knots[j] - knots[i];
        let slope = (values[j] - values[i]) / h - h * (2.0 * m[i] + m[j]) / 6.0;
        let end_slope = if x <= knots[0] {
            slope
        } else {
            slope + h * (m[i] + m[j]) / 2.0
        };
        let (k, v) = if x <= knots[0] {
            (knots[0], values[0])
        } else {
            (knots[n - 1], values[n - 1])
        };
        return v + end_slope * (x - k);
    }
    let i = knots
        .partition_point(|&k| k <= x)
        .saturating_sub(1)
        .min(n - 2);
    let h = knots[i + 1] - knots[i];
    let a = (knots[i + 1] - x) / h;
    let b = (x - knots[i]) / h;
    a * values[i]
        + b * values[i + 1]
        + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

/// Second derivatives at the knots with zero end conditions (tridiagonal solve).
fn second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        diag[i] = (h0 + h1) / 3.0;
        upper[i] = h1 / 6.0;
        rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        if i > 1 {
            let w = (h0 / 6.0) / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
    }
    for i in (1..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub from: f64,
    pub to: f64,
    /// Round sampled values to whole numbers (e.g. day of year).
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<String>,
}

fn default_stage_column() -> String {
    "stage".to_string()
}

/// Everything needed to generate one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cut points `θ_1 = −1 < θ_2 < …`.
    pub theta: Vec<f64>,
    #[serde(default = "default_stage_column")]
    pub stage_column: String,
    /// Stage labels; defaults to `1..K`.
    #[serde(default)]
    pub stages: Option<Vec<String>>,
    pub covariate: CovariateSpec,
    #[serde(default)]
    pub factor: Option<FactorSpec>,
    pub eta: EtaFunction,
}

impl TruthSpec {
    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::from_theta(&self.theta)
    }

    pub fn coding(&self) -> Result<StageCoding> {
        match &self.stages {
            Some(labels) => {
                if labels.len() != self.theta.len() + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "{} stage labels for {} thresholds",
                        labels.len(),
                        self.theta.len()
                    )));
                }
                StageCoding::new(labels.iter().cloned())
            }
            None => StageCoding::numeric(self.theta.len() + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        self.thresholds()?;
        self.coding()?;
        let c = &self.covariate;
        if !(c.from.is_finite() && c.to.is_finite() && c.to >= c.from) {
            return Err(Error::InvalidArgument(format!(
                "covariate range {}..{} is invalid",
                c.from, c.to
            )));
        }
        let levels = self.factor.as_ref().map_or(0, |f| f.levels.len());
        if self.eta.needs_factor() && levels == 0 {
            return Err(Error::InvalidArgument(
                "per-level deviations need a factor".into(),
            ));
        }
        if let Some(f) = &self.factor {
            if f.levels.is_empty() {
                return Err(Error::InvalidArgument(
                    "factor needs at least one level".into(),
                ));
            }
        }
        self.eta.validate(levels)
    }
}

/// A simulated dataset together with the true linear predictor of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub eta_true: Vec<f64>,
}

impl SimulatedData {
    /// Delimited text with an extra `eta_true` column after the covariates.
    pub fn write<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let frame = self
            .dataset
            .frame()
            .clone()
            .with_numeric("eta_true", self.eta_true.clone())?;
        let d = Dataset::new(
            self.dataset.stage_column(),
            self.dataset.coding().clone(),
            self.dataset.stages().to_vec(),
            frame,
        )?;
        write_dataset(&d, writer, delimiter)
    }
}

/// Stage `k` with `θ_{k-1} < z ≤ θ_k`.
pub fn stage_of(z: f64, theta: &[f64]) -> usize {
    1 + theta.partition_point(|&t| t < z)
}

/// Draws `Z̃ = η(x) + ε` with logistic `ε` and cuts it at the thresholds, row by row.
///
/// Row `i` uses its own random stream, so rows do not depend on one another.
pub fn simulate_dataset(ts: &TruthSpec) -> Result<SimulatedData> {
    ts.validate()?;
    let theta = ts.thresholds()?.theta().to_vec();
    let n_levels = ts.factor.as_ref().map_or(0, |f| f.levels.len());
    let c = &ts.covariate;
    let mut xs = Vec::with_capacity(ts.n);
    let mut levels = Vec::with_capacity(ts.n);
    let mut eta = Vec::with_capacity(ts.n);
    let mut stages = Vec::with_capacity(ts.n);
    for i in 0..ts.n {
        let mut rng = ChaCha8Rng::seed_from_u64(ts.seed);
        rng.set_stream(i as u64);
        let u: f64 = rng.random();
        let mut x = c.from + u * (c.to - c.from);
        if c.integer {
            x = x.round().clamp(c.from.ceil(), c.to.floor());
        }
        let level = if n_levels > 0 {
            rng.random_range(0..n_levels)
        } else {
            0
        };
        let e = ts.eta.eval(x, level);
        let noise = logit(rng.sample::<f64, _>(Open01));
        xs.push(x);
        levels.push(level);
        eta.push(e);
        stages.push(stage_of(e + noise, &theta));
    }
    let mut frame = Frame::new(ts.n).with_numeric(&c.name, xs)?;
    if let Some(f) = &ts.factor {
        let labels: Vec<&str> = levels.iter().map(|&g| f.levels[g].as_str()).collect();
        frame = frame.with_factor(&f.name, &labels)?;
    }
    let dataset = Dataset::new(&ts.stage_column, ts.coding()?, stages, frame)?;
    Ok(SimulatedData {
        dataset,
        eta_true: eta,
    })
}
