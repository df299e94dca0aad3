//! Comma-delimited result tables. Numbers are written in their shortest
//! round-trip form so that a value read back is bit-identical to the one
//! stored in the summary.

use locrand_core::inference::CiStatus;
use locrand_core::sensitivity::{emit_bounds_table, emit_surface_table, format_cell, WindowCi, NA};
use locrand_core::winselect::emit_scan_plot_data;
use locrand_core::{
    Dataset, GammaBoundsResult, InferenceResult, SensitivitySurface, Window, WindowScanResult,
};

pub const SCAN: &str = "scan";
pub const INFERENCE: &str = "inference";
pub const INFERENCE_GRID: &str = "inference_grid";
pub const SENSITIVITY: &str = "sensitivity";
pub const SENSITIVITY_CI: &str = "sensitivity_ci";
pub const RBOUNDS: &str = "rbounds";
pub const RDPLOT: &str = "rdplot";

/// Accumulates rows for one table.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[String]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    fn with_header(header: &[&str]) -> Self {
        Self::new(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>())
    }

    pub fn row(&mut self, cells: &[String]) {
        self.writer.write_record(cells).expect("writing to memory");
    }

    pub fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("writing to memory")
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    format_cell(v)
}

fn ci_status(status: CiStatus) -> &'static str {
    match status {
        CiStatus::Ok => "ok",
        CiStatus::Empty => "empty",
    }
}

pub fn scan_table(scan: &WindowScanResult) -> Vec<u8> {
    let mut header: Vec<String> = [
        "half_width",
        "left",
        "right",
        "n_control",
        "n_treated",
        "min_pvalue",
        "threshold",
    ]
    .iter()
    .map(|h| h.to_string())
    .collect();
    header.extend(scan.covariate_names.iter().map(|c| format!("p_{c}")));
    let mut t = Table::new(&header);
    for (plot, row) in emit_scan_plot_data(scan).iter().zip(&scan.rows) {
        let mut cells = vec![
            num(plot.half_width),
            num(row.window.left),
            num(row.window.right),
            plot.n_control.to_string(),
            plot.n_treated.to_string(),
            num(plot.min_pvalue),
            num(scan.threshold),
        ];
        cells.extend(plot.covariate_pvalues.iter().map(|&p| num(p)));
        t.row(&cells);
    }
    t.finish()
}

pub struct InferenceRow<'a> {
    pub outcome: &'a str,
    pub window: Window,
    pub alpha: f64,
    pub null_tau: f64,
    pub result: &'a InferenceResult,
}

pub fn inference_table(rows: &[InferenceRow]) -> Vec<u8> {
    let mut t = Table::with_header(&[
        "outcome",
        "left",
        "right",
        "n_control",
        "n_treated",
        "point_estimate",
        "null_tau",
        "p_value",
        "n_draws",
        "exhaustive",
        "alpha",
        "ci_low",
        "ci_high",
        "ci_status",
        "contiguous",
    ]);
    for r in rows {
        let res = r.result;
        t.row(&[
            r.outcome.to_string(),
            num(r.window.left),
            num(r.window.right),
            res.n_control.to_string(),
            res.n_treated.to_string(),
            num(res.point_estimate),
            num(r.null_tau),
            num(res.p_value.p),
            res.p_value.n_draws_effective.to_string(),
            res.p_value.exhaustive.to_string(),
            num(r.alpha),
            opt(res.ci_low),
            opt(res.ci_high),
            ci_status(res.status).to_string(),
            res.accepted_taus_contiguous.to_string(),
        ]);
    }
    t.finish()
}

pub fn inference_grid_table(rows: &[InferenceRow]) -> Vec<u8> {
    let mut t = Table::with_header(&["outcome", "tau", "p"]);
    for r in rows {
        for g in &r.result.grid {
            t.row(&[r.outcome.to_string(), num(g.tau), num(g.p)]);
        }
    }
    t.finish()
}

pub fn sensitivity_table(surfaces: &[(&str, &SensitivitySurface)]) -> Vec<u8> {
    let mut t = Table::with_header(&[
        "outcome",
        "half_width",
        "left",
        "right",
        "tau",
        "p",
        "alpha",
    ]);
    for (outcome, surface) in surfaces {
        for row in emit_surface_table(surface) {
            t.row(&[
                outcome.to_string(),
                num(row.window.half_width()),
                num(row.window.left),
                num(row.window.right),
                num(row.tau),
                opt(row.p),
                num(surface.alpha),
            ]);
        }
    }
    t.finish()
}

pub fn sensitivity_ci_table(surfaces: &[(&str, &SensitivitySurface)]) -> Vec<u8> {
    let mut t = Table::with_header(&[
        "outcome",
        "half_width",
        "left",
        "right",
        "status",
        "ci_low",
        "ci_high",
        "contiguous",
    ]);
    for (outcome, surface) in surfaces {
        for (window, ci) in surface.windows.iter().zip(&surface.per_window_ci) {
            let (status, low, high, contiguous) = match *ci {
                WindowCi::Interval {
                    low,
                    high,
                    contiguous,
                } => ("ok", num(low), num(high), contiguous.to_string()),
                WindowCi::Empty => ("empty", NA.into(), NA.into(), NA.into()),
                WindowCi::NotComputed => ("not_computed", NA.into(), NA.into(), NA.into()),
            };
            t.row(&[
                outcome.to_string(),
                num(window.half_width()),
                num(window.left),
                num(window.right),
                status.to_string(),
                low,
                high,
                contiguous,
            ]);
        }
    }
    t.finish()
}

pub fn rbounds_table(bounds: &[(&str, Window, f64, &GammaBoundsResult)]) -> Vec<u8> {
    let mut t = Table::with_header(&[
        "outcome", "left", "right", "gamma", "p_lower", "p_upper", "alpha",
    ]);
    for (outcome, window, alpha, result) in bounds {
        for row in emit_bounds_table(result) {
            t.row(&[
                outcome.to_string(),
                num(window.left),
                num(window.right),
                num(row.gamma),
                num(row.p_lower),
                num(row.p_upper),
                num(*alpha),
            ]);
        }
    }
    t.finish()
}

/// Every observation with its side and whether it falls in the analysis window.
pub fn rdplot_table(outcomes: &[(&str, &Dataset, Window)]) -> Vec<u8> {
    let mut t = Table::with_header(&[
        "outcome",
        "unit_id",
        "running",
        "value",
        "side",
        "in_window",
    ]);
    for (outcome, dataset, window) in outcomes {
        for o in dataset.observations() {
            let side = if o.running >= dataset.cutoff() {
                "treated"
            } else {
                "control"
            };
            t.row(&[
                outcome.to_string(),
                o.unit_id.clone(),
                num(o.running),
                num(o.outcome),
                side.to_string(),
                window.contains(o.running).to_string(),
            ]);
        }
    }
    t.finish()
}
