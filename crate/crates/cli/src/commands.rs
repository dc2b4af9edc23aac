use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ordgam::basis::{assemble_design, TermBasis};
use ordgam::data::{load_dataset, load_frame, Dataset, Frame, Schema, StageCoding};
use ordgam::diagnostics::{ks_test, qq_logistic, residual_plot_data, surrogate_residuals};
use ordgam::fit::{optimize_lambdas, summarize, FitOptions, FitResult};
use ordgam::formula::{parse_formula, Term};
use ordgam::inference::{
    crossing_days, default_grid, posterior_draws, predict_category, predict_cumulative,
    predict_linear, quantile_day as quantile_day_at, rate_of_change, simulation_band,
    transition_density, Direction, Grid,
};
use ordgam::ocat::logistic_cdf;
use ordgam::simulate::{simulate_dataset, TruthSpec};
use ordgam::Error;
use serde::Serialize;

use crate::archive::{ModelArchive, Provenance};
use crate::table::{write_json, Cell, Table};
use crate::{
    CliError, CliResult, Delim, FitArgs, GridArgs, Output, PredictArgs, PredictType,
    QuantileDayArgs, RateArgs, ResidualArgs, SimulateArgs, TransitionArgs,
};

fn delimiter(d: &Delim) -> CliResult<u8> {
    match d.delimiter.as_str() {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        s if s.len() == 1 => Ok(s.as_bytes()[0]),
        s => Err(CliError::Usage(format!(
            "delimiter must be one character or \"tab\", got {s:?}"
        ))),
    }
}

/// True when every non-missing cell of `column` parses as a number.
fn column_is_numeric(path: &Path, delim: u8, column: &str) -> CliResult<bool> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(Error::from)?;
    let headers = rdr.headers().map_err(Error::from)?.clone();
    let Some(idx) = headers.iter().position(|h| h.trim() == column) else {
        return Err(Error::Schema(format!("missing column {column:?}")).into());
    };
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let v = rec.get(idx).unwrap_or("").trim();
        if !v.is_empty() && v != "NA" && v.parse::<f64>().is_err() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

pub fn fit(a: FitArgs) -> CliResult<()> {
    let delim = delimiter(&a.delim)?;
    let spec = parse_formula(&a.formula)?;
    if a.k < 2 {
        return Err(CliError::Usage("--K must be at least 2".into()));
    }
    let coding = match &a.stages {
        Some(labels) if labels.len() != a.k => {
            return Err(CliError::Usage(format!(
                "--stages lists {} labels but --K is {}",
                labels.len(),
                a.k
            )))
        }
        Some(labels) => StageCoding::new(labels.iter().map(|s| s.trim().to_string()))?,
        None => StageCoding::numeric(a.k)?,
    };
    let mut schema = Schema::new(&spec.response, coding);
    schema.delimiter = delim;
    schema.count = a.count.clone();
    for t in &spec.terms {
        match t {
            Term::Linear { name } => {
                if a.factors.contains(name) || !column_is_numeric(&a.data, delim, name)? {
                    push_unique(&mut schema.factors, name);
                } else {
                    push_unique(&mut schema.numeric, name);
                }
            }
            Term::Smooth { var, .. } => push_unique(&mut schema.numeric, var),
            Term::FactorSmooth { var, factor, .. } => {
                push_unique(&mut schema.numeric, var);
                push_unique(&mut schema.factors, factor);
            }
        }
    }
    let d = load_dataset(&a.data, &schema)?;
    let m = assemble_design(&d, &spec)?;
    let fr = optimize_lambdas(&m, &FitOptions::default())?;
    let summary = summarize(&fr);
    print!("{summary}");
    if let Some(p) = &a.json {
        write_json(&summary, p)?;
    }
    ModelArchive::new(fr, Provenance::for_data(&a.data, d.len())?).save(&a.out)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<FitResult> {
    Ok(ModelArchive::load(path)?.model)
}

fn emit<T: Serialize>(table: &Table, mirror: &T, out: &Output) -> CliResult<()> {
    table.emit(out.out.as_deref())?;
    if let Some(p) = &out.json {
        write_json(mirror, p)?;
    }
    Ok(())
}

/// Model covariates of `frame` as leading columns, numeric first.
fn covariate_columns(fr: &FitResult, frame: &Frame) -> CliResult<(Vec<String>, Vec<Vec<Cell>>)> {
    let (numeric, factors) = fr.layout.variables();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<Cell>> = Vec::new();
    for n in &numeric {
        names.push(n.clone());
        cols.push(frame.covariate(n)?.iter().map(|&v| v.into()).collect());
    }
    for f in &factors {
        let c = frame.factor(f)?;
        names.push(f.clone());
        cols.push((0..frame.len()).map(|i| c.label(i).into()).collect());
    }
    Ok((names, cols))
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let fr = load_model(&a.model)?;
    let (numeric, factors) = fr.layout.variables();
    let newdata = load_frame(&a.newdata, &numeric, &factors, delimiter(&a.delim)?)?;
    let (mut columns, covs) = covariate_columns(&fr, &newdata)?;
    let labels = fr.coding.labels().to_vec();
    let mut values: Vec<Vec<f64>> = Vec::new();
    match a.kind {
        PredictType::Response => {
            let cp = predict_category(&fr, &newdata)?;
            columns.extend(labels.iter().map(|l| format!("p_{l}")));
            columns.extend(labels.iter().map(|l| format!("se_{l}")));
            for i in 0..newdata.len() {
                let mut row: Vec<f64> = cp.probs.row(i).iter().copied().collect();
                row.extend(cp.se.row(i).iter());
                values.push(row);
            }
        }
        PredictType::CumulativeLeq | PredictType::CumulativeGeq => {
            let (dir, prefix) = if a.kind == PredictType::CumulativeLeq {
                (Direction::Leq, "leq")
            } else {
                (Direction::Geq, "geq")
            };
            let c = predict_cumulative(&fr, &newdata, dir)?;
            columns.extend(labels.iter().map(|l| format!("{prefix}_{l}")));
            values.extend(c.row_iter().map(|r| r.iter().copied().collect()));
        }
        PredictType::Link => {
            let lp = predict_linear(&fr, &newdata)?;
            let (lo, hi) = lp.band(a.level)?;
            columns.extend(["eta", "se", "lower", "upper"].map(String::from));
            values = (0..newdata.len())
                .map(|i| vec![lp.eta[i], lp.se[i], lo[i], hi[i]])
                .collect();
            if let (Some(n), Some(seed)) = (a.draws, a.seed) {
                let draws = posterior_draws(&fr, n, seed)?;
                let band = simulation_band(&fr, &newdata, &draws, a.level)?;
                columns.extend(["sim_lower", "sim_upper"].map(String::from));
                for (i, row) in values.iter_mut().enumerate() {
                    row.extend([band.lower[i], band.upper[i]]);
                }
            }
        }
    }
    let mut table = Table::new(columns);
    for (i, row) in values.into_iter().enumerate() {
        let mut cells: Vec<Cell> = covs.iter().map(|c| c[i].clone()).collect();
        cells.extend(row.into_iter().map(Cell::from));
        table.push(cells);
    }
    emit(&table, &table, &a.output)
}

fn model_dataset(
    fr: &FitResult,
    path: &Path,
    delim: u8,
    count: Option<String>,
) -> CliResult<Dataset> {
    let (numeric, factors) = fr.layout.variables();
    let mut schema = Schema::new(&fr.spec.response, fr.coding.clone());
    schema.numeric = numeric;
    schema.factors = factors;
    schema.delimiter = delim;
    schema.count = count;
    Ok(load_dataset(path, &schema)?)
}

#[derive(Serialize)]
struct ResidualReport<'a> {
    seed: u64,
    replicates: usize,
    ks_statistic: f64,
    ks_p_value: f64,
    residuals: &'a Table,
}

pub fn residuals(a: ResidualArgs) -> CliResult<()> {
    if a.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let fr = load_model(&a.model)?;
    let d = model_dataset(&fr, &a.data, delimiter(&a.delim)?, a.count.clone())?;
    let sr = surrogate_residuals(&fr, &d, a.seed, a.replicates)?;
    let mut table = Table::new(["obs", "replicate", "stage", "eta", "residual"]);
    for i in 0..sr.len() {
        table.push(vec![
            (sr.obs[i] + 1).into(),
            (sr.replicate[i] + 1).into(),
            fr.coding.label(sr.stage[i]).into(),
            sr.eta[i].into(),
            sr.r[i].into(),
        ]);
    }
    let ks = ks_test(&sr.r, logistic_cdf);
    eprintln!(
        "KS test against the standard logistic: D = {:.5}, p = {:.4}",
        ks.statistic, ks.p_value
    );
    if let Some(p) = &a.plot {
        let mut t = Table::new([a.against.as_str(), "residual", "trend"]);
        for pt in residual_plot_data(&sr, &d, &a.against)? {
            t.push(vec![pt.x.into(), pt.r.into(), pt.trend.into()]);
        }
        t.emit(Some(p))?;
    }
    if let Some(p) = &a.qq {
        let mut t = Table::new(["theoretical", "sample"]);
        for (x, y) in qq_logistic(&sr.r) {
            t.push(vec![x.into(), y.into()]);
        }
        t.emit(Some(p))?;
    }
    let report = ResidualReport {
        seed: a.seed,
        replicates: a.replicates,
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
        residuals: &table,
    };
    emit(&table, &report, &a.output)
}

/// Grid variable, grid and fixed covariate row.
fn resolve_grid(fr: &FitResult, g: &GridArgs) -> CliResult<(String, Grid, Option<Frame>)> {
    let var = match &g.var {
        Some(v) => v.clone(),
        None => fr
            .layout
            .terms
            .iter()
            .find_map(|t| match &t.basis {
                TermBasis::Smooth(s) => Some(s.var.clone()),
                TermBasis::FactorSmooth(s) => Some(s.var.clone()),
                _ => None,
            })
            .ok_or_else(|| CliError::Usage("the model has no smooth term; give --var".into()))?,
    };
    let grid = match &g.grid {
        Some(text) => Grid::parse(text)?,
        None => default_grid(fr, &var)?,
    };
    let (numeric, factors) = fr.layout.variables();
    let fixed = if g.at.is_empty() {
        None
    } else {
        let mut f = Frame::new(1);
        for item in &g.at {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--at expects NAME=VALUE, got {item:?}")))?;
            let (name, value) = (name.trim(), value.trim());
            if factors.iter().any(|x| x == name) {
                f = f.with_factor(name, &[value])?;
            } else if numeric.iter().any(|x| x == name) {
                let v: f64 = value.parse().map_err(|_| {
                    CliError::Usage(format!("--at {name}: {value:?} is not a number"))
                })?;
                f.push_numeric(name, vec![v])?;
            } else {
                return Err(Error::UnknownVariable(name.to_string()).into());
            }
        }
        Some(f)
    };
    Ok((var, grid, fixed))
}

pub fn transitions(a: TransitionArgs) -> CliResult<()> {
    if a.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let fr = load_model(&a.model)?;
    let (var, grid, fixed) = resolve_grid(&fr, &a.grid)?;
    let draws = posterior_draws(&fr, a.draws, a.seed)?;
    let ts = crossing_days(&fr, &draws, &var, &grid, fixed.as_ref(), !a.fix_thresholds)?;
    let dens = transition_density(&ts, a.bandwidth)?;
    let labels = fr.coding.labels();
    let mut samples = Table::new([
        "threshold",
        "from_stage",
        "to_stage",
        var.as_str(),
        "upward",
    ]);
    for t in &ts.per_threshold {
        for (day, up) in t.days.iter().zip(&t.upward) {
            samples.push(vec![
                t.threshold.into(),
                labels[t.threshold - 1].as_str().into(),
                labels[t.threshold].as_str().into(),
                (*day).into(),
                (*up).into(),
            ]);
        }
    }
    if let Some(p) = &a.density {
        let mut t = Table::new(["threshold", var.as_str(), "density"]);
        for d in &dens {
            for (x, y) in d.x.iter().zip(&d.density) {
                t.push(vec![d.threshold.into(), (*x).into(), (*y).into()]);
            }
        }
        t.emit(Some(p))?;
    }
    if let Some(p) = &a.summary {
        let mut t = Table::new([
            "threshold",
            "n",
            "bandwidth",
            "mean",
            "sd",
            "q025",
            "q50",
            "q975",
        ]);
        let opt = |v: Option<f64>| v.map_or(Cell::Text("NA".into()), Cell::Num);
        for d in &dens {
            t.push(vec![
                d.threshold.into(),
                d.n_samples.into(),
                opt(d.bandwidth),
                opt(d.mean),
                opt(d.sd),
                opt(d.q025),
                opt(d.q50),
                opt(d.q975),
            ]);
        }
        t.emit(Some(p))?;
    }
    #[derive(Serialize)]
    struct Mirror<'a> {
        seed: u64,
        samples: &'a ordgam::inference::TransitionSamples,
        densities: &'a [ordgam::inference::DensitySummary],
    }
    let mirror = Mirror {
        seed: a.seed,
        samples: &ts,
        densities: &dens,
    };
    emit(&samples, &mirror, &a.output)
}

pub fn quantile_day(a: QuantileDayArgs) -> CliResult<()> {
    let fr = load_model(&a.model)?;
    let (var, grid, fixed) = resolve_grid(&fr, &a.grid)?;
    let mut table = Table::new(["stage", "p", var.as_str(), "achieved"]);
    for &p in &a.p {
        let q = quantile_day_at(&fr, a.stage_k, p, &var, &grid, fixed.as_ref())?;
        table.push(vec![
            fr.coding.label(a.stage_k).into(),
            p.into(),
            q.day.into(),
            q.achieved.into(),
        ]);
    }
    emit(&table, &table, &a.output)
}

pub fn rate(a: RateArgs) -> CliResult<()> {
    let fr = load_model(&a.model)?;
    let (var, grid, fixed) = resolve_grid(&fr, &a.grid)?;
    let rc = rate_of_change(&fr, &var, &grid, fixed.as_ref())?;
    let labels = fr.coding.labels();
    let mut columns = vec![var.clone()];
    columns.extend(labels.iter().map(|l| format!("dp_{l}")));
    columns.extend(labels.iter().map(|l| format!("dleq_{l}")));
    let mut table = Table::new(columns);
    for (i, &x) in rc.x.iter().enumerate() {
        let mut row: Vec<Cell> = vec![x.into()];
        row.extend(rc.category.row(i).iter().map(|&v| Cell::Num(v)));
        row.extend(rc.cumulative.row(i).iter().map(|&v| Cell::Num(v)));
        table.push(row);
    }
    emit(&table, &table, &a.output)
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.spec)?;
    let mut ts: TruthSpec = serde_json::from_str(&text).map_err(Error::from)?;
    ts.seed = a.seed;
    if let Some(n) = a.n {
        ts.n = n;
    }
    let sim = simulate_dataset(&ts)?;
    let delim = delimiter(&a.delim)?;
    match &a.out {
        Some(p) => sim.write(BufWriter::new(File::create(p)?), delim)?,
        None => sim.write(std::io::stdout().lock(), delim)?,
    }
    Ok(())
}
