//! Panel records, the recentered dataset, and windows around the cutoff.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};

/// Outcome name whose values must lie in `[0, 1]`.
pub const GINI: &str = "gini";

/// One unit-year row of the input panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub unit_id: String,
    pub year: i32,
    pub outcome_values: BTreeMap<String, f64>,
    pub covariate_values: BTreeMap<String, f64>,
}

/// Maps logical variable names onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSchema {
    pub unit_id: String,
    pub year: String,
    /// logical outcome name -> column header
    pub outcomes: BTreeMap<String, String>,
    /// logical covariate name -> column header
    pub covariates: BTreeMap<String, String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        let same = |names: &[&str]| {
            names
                .iter()
                .map(|n| (n.to_string(), n.to_string()))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            unit_id: "unit_id".into(),
            year: "year".into(),
            outcomes: same(&[GINI, "male_income", "female_income"]),
            covariates: same(&["pbf"]),
        }
    }
}

/// A single observation after recentering, restricted to one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: String,
    /// Distance from the cutoff (years relative to the cutoff year).
    pub running: f64,
    pub outcome: f64,
    /// Selected covariates, in `Dataset::covariate_names` order.
    pub covariates: Vec<f64>,
}

/// Observations recentered so that the cutoff sits at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    cutoff: f64,
    outcome_name: String,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        outcome_name: impl Into<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        for obs in &observations {
            if obs.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "observation {} carries {} covariates, expected {}",
                    obs.unit_id,
                    obs.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !obs.running.is_finite() {
                return Err(Error::Validation(format!(
                    "observation {} has a non-finite running value",
                    obs.unit_id
                )));
            }
        }
        Ok(Self {
            observations,
            cutoff: 0.0,
            outcome_name: outcome_name.into(),
            covariate_names,
        })
    }

    /// Builds an anonymous covariate-free dataset from parallel columns.
    pub fn from_columns(running: &[f64], outcome: &[f64]) -> Result<Self> {
        Self::from_columns_with_covariate(running, outcome, None)
    }

    /// Like [`Dataset::from_columns`] with one covariate named `x`.
    pub fn from_columns_with_covariate(
        running: &[f64],
        outcome: &[f64],
        covariate: Option<&[f64]>,
    ) -> Result<Self> {
        if running.len() != outcome.len() || covariate.is_some_and(|c| c.len() != running.len()) {
            return Err(Error::Validation("column lengths differ".into()));
        }
        let observations = running
            .iter()
            .zip(outcome)
            .enumerate()
            .map(|(i, (&r, &y))| Observation {
                unit_id: format!("obs{i}"),
                running: r,
                outcome: y,
                covariates: covariate.map(|c| vec![c[i]]).unwrap_or_default(),
            })
            .collect();
        let names = if covariate.is_some() {
            vec!["x".to_string()]
        } else {
            Vec::new()
        };
        Self::new(observations, "y", names)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Closed interval `[left, right]` of running values containing the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub left: f64,
    pub right: f64,
}

impl Window {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        if !(left.is_finite() && right.is_finite()) || left > 0.0 || right < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "window [{left}, {right}] must be finite and contain the cutoff 0"
            )));
        }
        Ok(Self { left, right })
    }

    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn is_symmetric(&self) -> bool {
        self.right == -self.left
    }

    pub fn half_width(&self) -> f64 {
        (self.right - self.left) / 2.0
    }

    pub fn contains(&self, running: f64) -> bool {
        self.left <= running && running <= self.right
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.left, self.right)
    }
}

/// Observations of one window, split by side of the cutoff.
#[derive(Debug, Clone)]
pub struct WindowSplit<'a> {
    pub control: Vec<&'a Observation>,
    pub treated: Vec<&'a Observation>,
}

impl<'a> WindowSplit<'a> {
    pub fn control_outcomes(&self) -> Vec<f64> {
        self.control.iter().map(|o| o.outcome).collect()
    }

    pub fn treated_outcomes(&self) -> Vec<f64> {
        self.treated.iter().map(|o| o.outcome).collect()
    }

    pub fn control_covariate(&self, index: usize) -> Vec<f64> {
        self.control.iter().map(|o| o.covariates[index]).collect()
    }

    pub fn treated_covariate(&self, index: usize) -> Vec<f64> {
        self.treated.iter().map(|o| o.covariates[index]).collect()
    }
}

/// Splits the window without complaining about empty sides.
pub fn split_window<'a>(dataset: &'a Dataset, window: &Window) -> WindowSplit<'a> {
    let cutoff = dataset.cutoff;
    let mut split = WindowSplit {
        control: Vec::new(),
        treated: Vec::new(),
    };
    for obs in &dataset.observations {
        if !window.contains(obs.running) {
            continue;
        }
        // running == cutoff is treated
        if obs.running < cutoff {
            split.control.push(obs);
        } else {
            split.treated.push(obs);
        }
    }
    split
}

/// Control = `left <= running < cutoff`, treated = `cutoff <= running <= right`.
pub fn subset_window<'a>(dataset: &'a Dataset, window: &Window) -> Result<WindowSplit<'a>> {
    let split = split_window(dataset, window);
    if split.control.is_empty() {
        return Err(Error::EmptySide(Side::Control));
    }
    if split.treated.is_empty() {
        return Err(Error::EmptySide(Side::Treated));
    }
    Ok(split)
}

/// Builds a dataset for one outcome with running = year - cutoff_year.
pub fn recenter(
    records: &[PanelRecord],
    cutoff_year: i32,
    outcome_name: &str,
    covariate_names: &[String],
) -> Result<Dataset> {
    let describe = |r: &PanelRecord| format!("{} {}", r.unit_id, r.year);
    let mut observations = Vec::with_capacity(records.len());
    for record in records {
        let outcome = *record.outcome_values.get(outcome_name).ok_or_else(|| {
            Error::Validation(format!(
                "record {} has no outcome `{outcome_name}`",
                describe(record)
            ))
        })?;
        let covariates = covariate_names
            .iter()
            .map(|name| {
                record.covariate_values.get(name).copied().ok_or_else(|| {
                    Error::Validation(format!(
                        "record {} has no covariate `{name}`",
                        describe(record)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        observations.push(Observation {
            unit_id: record.unit_id.clone(),
            running: f64::from(record.year - cutoff_year),
            outcome,
            covariates,
        });
    }
    Dataset::new(observations, outcome_name, covariate_names.to_vec())
}

pub fn load_panel_csv(path: &Path, schema: &PanelSchema) -> Result<Vec<PanelRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel_csv(file, schema)
}

pub fn read_panel_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<Vec<PanelRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let find = |column: &str| {
        headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::Schema {
                column: column.to_string(),
            })
    };

    let unit_col = find(&schema.unit_id)?;
    let year_col = find(&schema.year)?;
    let outcome_cols = schema
        .outcomes
        .iter()
        .map(|(name, column)| Ok((name.clone(), column.clone(), find(column)?)))
        .collect::<Result<Vec<_>>>()?;
    let covariate_cols = schema
        .covariates
        .iter()
        .map(|(name, column)| Ok((name.clone(), column.clone(), find(column)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let cell = |idx: usize| row.get(idx).unwrap_or("");
        let number = |idx: usize, column: &str| -> Result<f64> {
            let raw = cell(idx);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: row_no,
                    column: column.to_string(),
                    value: raw.to_string(),
                })
        };

        let unit_id = cell(unit_col).to_string();
        if unit_id.is_empty() {
            return Err(Error::Parse {
                row: row_no,
                column: schema.unit_id.clone(),
                value: String::new(),
            });
        }
        let year = cell(year_col).parse::<i32>().map_err(|_| Error::Parse {
            row: row_no,
            column: schema.year.clone(),
            value: cell(year_col).to_string(),
        })?;

        let mut outcome_values = BTreeMap::new();
        for (name, column, idx) in &outcome_cols {
            let v = number(*idx, column)?;
            if name == GINI && !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "row {row_no}: gini value {v} outside [0, 1]"
                )));
            }
            outcome_values.insert(name.clone(), v);
        }
        let mut covariate_values = BTreeMap::new();
        for (name, column, idx) in &covariate_cols {
            let v = number(*idx, column)?;
            if v < 0.0 {
                return Err(Error::Validation(format!(
                    "row {row_no}: covariate `{name}` is negative ({v})"
                )));
            }
            covariate_values.insert(name.clone(), v);
        }

        if !seen.insert((unit_id.clone(), year)) {
            return Err(Error::Validation(format!(
                "row {row_no}: duplicate unit/year ({unit_id}, {year})"
            )));
        }
        records.push(PanelRecord {
            unit_id,
            year,
            outcome_values,
            covariate_values,
        });
    }
    Ok(records)
}

/// Writes records back out in schema column order; numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_panel_csv<W: Write>(
    records: &[PanelRecord],
    schema: &PanelSchema,
    writer: W,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![schema.unit_id.clone(), schema.year.clone()];
    header.extend(schema.outcomes.values().cloned());
    header.extend(schema.covariates.values().cloned());
    csv.write_record(&header)?;
    for record in records {
        let mut row = vec![record.unit_id.clone(), record.year.to_string()];
        for name in schema.outcomes.keys() {
            row.push(fmt_value(record.outcome_values.get(name)));
        }
        for name in schema.covariates.keys() {
            row.push(fmt_value(record.covariate_values.get(name)));
        }
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

fn fmt_value(v: Option<&f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
