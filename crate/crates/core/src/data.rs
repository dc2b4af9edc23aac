//! Tabular observations: covariate frames, stage coding and delimited-text I/O.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered stage labels. Index `k` (1-based) corresponds to `labels[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StageCoding {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl StageCoding {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|s| s.into().trim().to_string())
            .collect();
        if labels.len() < 2 {
            return Err(Error::Schema(format!(
                "a stage coding needs at least 2 stages, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::Schema("empty stage label".into()));
            }
            if index.insert(l.clone(), i + 1).is_some() {
                return Err(Error::Schema(format!("duplicate stage label {l:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Stages already stored as integers `1..=k`.
    pub fn numeric(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label.trim()).copied()
    }

    pub fn label(&self, stage: usize) -> &str {
        &self.labels[stage - 1]
    }
}

impl TryFrom<Vec<String>> for StageCoding {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        StageCoding::new(v)
    }
}

impl From<StageCoding> for Vec<String> {
    fn from(c: StageCoding) -> Self {
        c.labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Factor column with levels registered in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorColumn {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl FactorColumn {
    pub fn from_labels<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *lookup.entry(l.to_string()).or_insert_with(|| {
                    levels.push(l.to_string());
                    levels.len() - 1
                })
            })
            .collect();
        Self {
            name: name.to_string(),
            levels,
            codes,
        }
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }
}

/// Covariate table without a response: numeric and factor columns of equal length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    len: usize,
    numeric: Vec<NumericColumn>,
    factors: Vec<FactorColumn>,
}

impl Frame {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            ..Default::default()
        }
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.push_numeric(name, values)?;
        Ok(self)
    }

    pub fn with_factor<S: AsRef<str>>(mut self, name: &str, labels: &[S]) -> Result<Self> {
        self.check_new_column(name, labels.len())?;
        self.factors.push(FactorColumn::from_labels(name, labels));
        Ok(self)
    }

    fn check_new_column(&self, name: &str, len: usize) -> Result<()> {
        if self.has_column(name) {
            return Err(Error::Schema(format!("duplicate column {name:?}")));
        }
        if len != self.len {
            return Err(Error::Dimension(format!(
                "column {name:?} has {len} values, frame has {} rows",
                self.len
            )));
        }
        Ok(())
    }

    pub fn push_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        self.check_new_column(name, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "column {name:?} has a non-finite value at row {}",
                i + 1
            )));
        }
        self.numeric.push(NumericColumn {
            name: name.to_string(),
            values,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.numeric_column(name).is_some() || self.factor_column(name).is_some()
    }

    pub fn numeric_columns(&self) -> &[NumericColumn] {
        &self.numeric
    }

    pub fn factor_columns(&self) -> &[FactorColumn] {
        &self.factors
    }

    pub fn numeric_column(&self, name: &str) -> Option<&NumericColumn> {
        self.numeric.iter().find(|c| c.name == name)
    }

    pub fn factor_column(&self, name: &str) -> Option<&FactorColumn> {
        self.factors.iter().find(|c| c.name == name)
    }

    pub fn covariate(&self, name: &str) -> Result<&[f64]> {
        self.numeric_column(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn factor(&self, name: &str) -> Result<&FactorColumn> {
        self.factor_column(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Row subset in the given order. Factor levels keep the original registry.
    pub fn select_rows(&self, rows: &[usize]) -> Frame {
        Frame {
            len: rows.len(),
            numeric: self
                .numeric
                .iter()
                .map(|c| NumericColumn {
                    name: c.name.clone(),
                    values: rows.iter().map(|&r| c.values[r]).collect(),
                })
                .collect(),
            factors: self
                .factors
                .iter()
                .map(|c| FactorColumn {
                    name: c.name.clone(),
                    levels: c.levels.clone(),
                    codes: rows.iter().map(|&r| c.codes[r]).collect(),
                })
                .collect(),
        }
    }

    /// Adds `out = day - min(day within group)`.
    pub fn derive_day_offset(&self, group: &str, day: &str, out: &str) -> Result<Frame> {
        let g = self.factor(group)?;
        let d = self.covariate(day)?;
        let mut first = vec![f64::INFINITY; g.levels.len()];
        for (&code, &v) in g.codes.iter().zip(d) {
            first[code] = first[code].min(v);
        }
        let offsets = g.codes.iter().zip(d).map(|(&c, &v)| v - first[c]).collect();
        let mut f = self.clone();
        f.push_numeric(out, offsets)?;
        Ok(f)
    }
}

/// One row of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub stage: usize,
    pub covariates: BTreeMap<String, f64>,
    pub factors: BTreeMap<String, String>,
}

/// Ordered stage observations with their covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    stage_column: String,
    coding: StageCoding,
    stages: Vec<usize>,
    frame: Frame,
}

impl Dataset {
    pub fn new(
        stage_column: &str,
        coding: StageCoding,
        stages: Vec<usize>,
        frame: Frame,
    ) -> Result<Self> {
        if stages.len() != frame.len() {
            return Err(Error::Dimension(format!(
                "{} stages for {} covariate rows",
                stages.len(),
                frame.len()
            )));
        }
        if let Some(i) = stages.iter().position(|&s| s < 1 || s > coding.len()) {
            return Err(Error::InvalidArgument(format!(
                "row {} has stage {} outside 1..={}",
                i + 1,
                stages[i],
                coding.len()
            )));
        }
        if frame.has_column(stage_column) {
            return Err(Error::Schema(format!(
                "stage column {stage_column:?} is also a covariate"
            )));
        }
        Ok(Self {
            stage_column: stage_column.to_string(),
            coding,
            stages,
            frame,
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Number of stages `K`.
    pub fn n_stages(&self) -> usize {
        self.coding.len()
    }

    pub fn stage_column(&self) -> &str {
        &self.stage_column
    }

    pub fn coding(&self) -> &StageCoding {
        &self.coding
    }

    pub fn stages(&self) -> &[usize] {
        &self.stages
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn factor_levels(&self) -> BTreeMap<String, Vec<String>> {
        self.frame
            .factors
            .iter()
            .map(|f| (f.name.clone(), f.levels.clone()))
            .collect()
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            stage: self.stages[i],
            covariates: self
                .frame
                .numeric
                .iter()
                .map(|c| (c.name.clone(), c.values[i]))
                .collect(),
            factors: self
                .frame
                .factors
                .iter()
                .map(|c| (c.name.clone(), c.label(i).to_string()))
                .collect(),
        }
    }

    pub fn derive_day_offset(&self, group: &str, day: &str, out: &str) -> Result<Dataset> {
        Ok(Dataset {
            frame: self.frame.derive_day_offset(group, day, out)?,
            ..self.clone()
        })
    }

    /// Schema that reads back what [`write_dataset`] produces.
    pub fn schema(&self) -> Schema {
        Schema {
            stage: self.stage_column.clone(),
            coding: self.coding.clone(),
            numeric: self.frame.numeric.iter().map(|c| c.name.clone()).collect(),
            factors: self.frame.factors.iter().map(|c| c.name.clone()).collect(),
            count: None,
            delimiter: b',',
        }
    }
}

/// Column roles for reading a dataset.
#[derive(Debug, Clone)]
pub struct Schema {
    pub stage: String,
    pub coding: StageCoding,
    pub numeric: Vec<String>,
    pub factors: Vec<String>,
    /// Optional count column: each row is expanded into that many observations.
    pub count: Option<String>,
    pub delimiter: u8,
}

impl Schema {
    pub fn new(stage: &str, coding: StageCoding) -> Self {
        Self {
            stage: stage.to_string(),
            coding,
            numeric: Vec::new(),
            factors: Vec::new(),
            count: None,
            delimiter: b',',
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
}

fn cell<'a>(rec: &'a csv::StringRecord, idx: usize, line: usize, column: &str) -> Result<&'a str> {
    match rec.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() && s != "NA" => Ok(s),
        _ => Err(Error::MissingCell {
            row: line,
            column: column.to_string(),
        }),
    }
}

fn parse_number(s: &str, line: usize, column: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row: line,
            column: column.to_string(),
            value: s.to_string(),
        })
}

struct RawColumns {
    numeric: Vec<Vec<f64>>,
    factors: Vec<Vec<String>>,
}

fn read_columns<R: Read>(
    reader: R,
    delimiter: u8,
    numeric: &[String],
    factors: &[String],
    mut on_row: impl FnMut(&csv::StringRecord, &csv::StringRecord, usize) -> Result<usize>,
) -> Result<RawColumns> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let num_idx: Vec<usize> = numeric
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let fac_idx: Vec<usize> = factors
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let mut out = RawColumns {
        numeric: vec![Vec::new(); numeric.len()],
        factors: vec![Vec::new(); factors.len()],
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let copies = on_row(&headers, &rec, line)?;
        for (j, (&idx, name)) in num_idx.iter().zip(numeric).enumerate() {
            let v = parse_number(cell(&rec, idx, line, name)?, line, name)?;
            out.numeric[j].extend(std::iter::repeat_n(v, copies));
        }
        for (j, (&idx, name)) in fac_idx.iter().zip(factors).enumerate() {
            let v = cell(&rec, idx, line, name)?;
            out.factors[j].extend(std::iter::repeat_n(v.to_string(), copies));
        }
    }
    Ok(out)
}

fn build_frame(
    len: usize,
    numeric: &[String],
    factors: &[String],
    cols: RawColumns,
) -> Result<Frame> {
    let mut frame = Frame::new(len);
    for (name, values) in numeric.iter().zip(cols.numeric) {
        frame.push_numeric(name, values)?;
    }
    for (name, labels) in factors.iter().zip(cols.factors) {
        frame = frame.with_factor(name, &labels)?;
    }
    Ok(frame)
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut stages = Vec::new();
    let mut stage_idx = None;
    let mut count_idx = None;
    let cols = read_columns(
        reader,
        schema.delimiter,
        &schema.numeric,
        &schema.factors,
        |headers, rec, line| {
            let si = match stage_idx {
                Some(i) => i,
                None => *stage_idx.insert(column_index(headers, &schema.stage)?),
            };
            let copies = match &schema.count {
                None => 1,
                Some(name) => {
                    let ci = match count_idx {
                        Some(i) => i,
                        None => *count_idx.insert(column_index(headers, name)?),
                    };
                    let raw = cell(rec, ci, line, name)?;
                    raw.parse::<usize>().map_err(|_| Error::Parse {
                        row: line,
                        column: name.clone(),
                        value: raw.to_string(),
                    })?
                }
            };
            let label = cell(rec, si, line, &schema.stage)?;
            let stage = schema.coding.index_of(label).ok_or_else(|| Error::Coding {
                row: line,
                label: label.to_string(),
            })?;
            stages.extend(std::iter::repeat_n(stage, copies));
            Ok(copies)
        },
    )?;
    let frame = build_frame(stages.len(), &schema.numeric, &schema.factors, cols)?;
    Dataset::new(&schema.stage, schema.coding.clone(), stages, frame)
}

/// Reads delimited text with a header row. Rows keep file order.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(std::io::BufReader::new(file), schema)
}

/// Reads a covariate-only table (no stage column), e.g. new data for prediction.
pub fn read_frame<R: Read>(
    reader: R,
    numeric: &[String],
    factors: &[String],
    delimiter: u8,
) -> Result<Frame> {
    let mut n = 0;
    let cols = read_columns(reader, delimiter, numeric, factors, |_, _, _| {
        n += 1;
        Ok(1)
    })?;
    build_frame(n, numeric, factors, cols)
}

pub fn load_frame(
    path: impl AsRef<Path>,
    numeric: &[String],
    factors: &[String],
    delimiter: u8,
) -> Result<Frame> {
    let file = std::fs::File::open(path.as_ref())?;
    read_frame(std::io::BufReader::new(file), numeric, factors, delimiter)
}

/// Writes the stage label column, then numeric columns, then factor columns.
pub fn write_dataset<W: Write>(d: &Dataset, writer: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let mut header = vec![d.stage_column.clone()];
    header.extend(d.frame.numeric.iter().map(|c| c.name.clone()));
    header.extend(d.frame.factors.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..d.len() {
        let mut rec = vec![d.coding.label(d.stages[i]).to_string()];
        rec.extend(d.frame.numeric.iter().map(|c| c.values[i].to_string()));
        rec.extend(d.frame.factors.iter().map(|c| c.label(i).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
