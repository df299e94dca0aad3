//! Window selection by covariate balance.
//!
//! Symmetric windows are grown from `w_min` in fixed increments. In each one
//! every covariate gets a randomization balance test; the scan stops at the
//! first window whose smallest balance p-value drops below the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_window, Dataset, Window};
use crate::error::{Error, Result};
use crate::inference::snap;
use crate::stats::{permutation_pvalue, PermutationPlan, StatKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowScanSpec {
    pub w_min: f64,
    pub w_max: f64,
    pub increment: f64,
    pub stat: StatKind,
    pub plan: PermutationPlan,
    pub threshold: f64,
    pub min_obs_per_side: usize,
}

impl Default for WindowScanSpec {
    fn default() -> Self {
        Self {
            w_min: 1.0,
            w_max: 5.0,
            increment: 0.125,
            stat: StatKind::DiffMeans,
            plan: PermutationPlan::default(),
            threshold: 0.15,
            min_obs_per_side: 10,
        }
    }
}

impl WindowScanSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.w_min, self.w_max, self.increment, self.threshold]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.w_min <= 0.0 || self.w_max < self.w_min || self.increment <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "window scan needs 0 < w_min <= w_max and increment > 0, got w_min={} w_max={} increment={}",
                self.w_min, self.w_max, self.increment
            )));
        }
        if (self.w_max - self.w_min) / self.increment > 1e6 {
            return Err(Error::InvalidSpec(
                "window scan has more than 1e6 windows".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "balance threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.min_obs_per_side < 2 {
            return Err(Error::InvalidSpec(
                "min_obs_per_side must be at least 2".into(),
            ));
        }
        self.plan.validate()
    }

    /// Half-widths `w_min, w_min + increment, ...` up to `w_max`.
    pub fn half_widths(&self) -> Vec<f64> {
        let count = ((self.w_max - self.w_min) / self.increment + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| snap(self.w_min + k as f64 * self.increment, self.increment))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScanRow {
    pub window: Window,
    pub covariate_pvalues: Vec<f64>,
    pub min_pvalue: f64,
    pub n_control: usize,
    pub n_treated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ThresholdCrossed,
    MaxWindowReached,
    InsufficientObs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScanResult {
    pub covariate_names: Vec<String>,
    pub threshold: f64,
    /// Ascending in window size; includes the failing window, if any.
    pub rows: Vec<WindowScanRow>,
    pub recommended: Option<Window>,
    pub stop_reason: StopReason,
}

pub fn scan_windows(dataset: &Dataset, spec: &WindowScanSpec) -> Result<WindowScanResult> {
    spec.validate()?;
    let n_cov = dataset.covariate_names().len();
    if n_cov == 0 {
        return Err(Error::Validation(
            "window scan needs at least one covariate".into(),
        ));
    }

    let half_widths = spec.half_widths();
    let mut result = WindowScanResult {
        covariate_names: dataset.covariate_names().to_vec(),
        threshold: spec.threshold,
        rows: Vec::new(),
        recommended: None,
        stop_reason: StopReason::MaxWindowReached,
    };

    let first = split_window(dataset, &Window::symmetric(half_widths[0])?);
    if first.control.len().min(first.treated.len()) < spec.min_obs_per_side {
        result.stop_reason = StopReason::InsufficientObs;
        return Ok(result);
    }

    let evaluate = |w: f64| -> Result<WindowScanRow> {
        let window = Window::symmetric(w)?;
        let split = split_window(dataset, &window);
        let covariate_pvalues = (0..n_cov)
            .map(|c| {
                permutation_pvalue(
                    spec.stat,
                    &split.treated_covariate(c),
                    &split.control_covariate(c),
                    &spec.plan,
                )
                .map(|r| r.p)
            })
            .collect::<Result<Vec<_>>>()?;
        let min_pvalue = covariate_pvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(WindowScanRow {
            window,
            covariate_pvalues,
            min_pvalue,
            n_control: split.control.len(),
            n_treated: split.treated.len(),
        })
    };

    // Windows are evaluated a batch at a time in parallel and committed in
    // order, so the stopping point is the same as a sequential scan.
    let batch = rayon::current_num_threads().max(1);
    for chunk in half_widths.chunks(batch) {
        let rows = chunk
            .par_iter()
            .map(|&w| evaluate(w))
            .collect::<Result<Vec<_>>>()?;
        for row in rows {
            let failed = row.min_pvalue < spec.threshold;
            result.rows.push(row);
            if failed {
                result.stop_reason = StopReason::ThresholdCrossed;
                result.recommended = recommend_before_failure(&result.rows);
                return Ok(result);
            }
        }
    }
    result.recommended = result.rows.last().map(|r| r.window);
    Ok(result)
}

/// After a failure, the last passing window may share its observations with
/// several narrower grid windows; the narrowest of them is recommended, since
/// the wider ones only add empty running-variable range.
fn recommend_before_failure(rows: &[WindowScanRow]) -> Option<Window> {
    let passing = &rows[..rows.len() - 1];
    let last = passing.last()?;
    passing
        .iter()
        .find(|r| r.n_control == last.n_control && r.n_treated == last.n_treated)
        .map(|r| r.window)
}

/// One row per scanned window for plotting balance against window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlotRow {
    pub half_width: f64,
    pub n_control: usize,
    pub n_treated: usize,
    pub min_pvalue: f64,
    pub covariate_pvalues: Vec<f64>,
}

pub fn emit_scan_plot_data(result: &WindowScanResult) -> Vec<ScanPlotRow> {
    result
        .rows
        .iter()
        .map(|r| ScanPlotRow {
            half_width: r.window.half_width(),
            n_control: r.n_control,
            n_treated: r.n_treated,
            min_pvalue: r.min_pvalue,
            covariate_pvalues: r.covariate_pvalues.clone(),
        })
        .collect()
}
