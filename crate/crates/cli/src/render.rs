//! Standalone SVG figures drawn from the result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::tables::{RBOUNDS, RDPLOT, SCAN, SENSITIVITY};

/// Table name (without extension) to CSV bytes.
pub type Tables = BTreeMap<String, Vec<u8>>;

/// A rendered figure: file name and SVG text.
pub type Figure = (String, String);

/// Outcome name and the table rows that belong to it.
type OutcomeRows<'a> = (String, Vec<&'a Vec<String>>);

struct Rows {
    table: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Rows {
    fn parse(tables: &Tables, name: &str) -> CliResult<Self> {
        let bytes = tables
            .get(name)
            .ok_or_else(|| CliError::MissingTable(name.to_string()))?;
        let bad = |e: csv::Error| CliError::BadTable {
            table: name.to_string(),
            detail: e.to_string(),
        };
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        let header = reader
            .headers()
            .map_err(bad)?
            .iter()
            .map(String::from)
            .collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(bad)?;
        if rows.is_empty() {
            return Err(CliError::MissingTable(name.to_string()));
        }
        Ok(Self {
            table: name.to_string(),
            header,
            rows,
        })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::BadTable {
                table: self.table.clone(),
                detail: format!("no column \"{name}\""),
            })
    }

    /// Parsed number, or `None` for the NA token.
    fn num(&self, row: &[String], col: usize) -> CliResult<Option<f64>> {
        let cell = &row[col];
        if cell == locrand_core::sensitivity::NA {
            return Ok(None);
        }
        cell.parse().map(Some).map_err(|_| CliError::BadTable {
            table: self.table.clone(),
            detail: format!(
                "\"{cell}\" in column \"{}\" is not a number",
                self.header[col]
            ),
        })
    }

    fn req(&self, row: &[String], col: usize) -> CliResult<f64> {
        self.num(row, col)?.ok_or_else(|| CliError::BadTable {
            table: self.table.clone(),
            detail: format!("missing value in column \"{}\"", self.header[col]),
        })
    }

    /// Row groups keyed by the `outcome` column, in first-seen order.
    fn by_outcome(&self) -> CliResult<Vec<OutcomeRows<'_>>> {
        let c = self.col("outcome")?;
        let mut groups: Vec<OutcomeRows> = Vec::new();
        for row in &self.rows {
            match groups.iter_mut().find(|(name, _)| *name == row[c]) {
                Some((_, rows)) => rows.push(row),
                None => groups.push((row[c].clone(), vec![row])),
            }
        }
        Ok(groups)
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 54.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = (lo.abs() * 0.1).max(0.5);
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

struct Plot {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Plot {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let mut plot = Self { svg, x, y };
        plot.axes(x_label, y_label);
        plot
    }

    fn sx(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            self.svg,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        for t in ticks(self.x.0, self.x.1) {
            let px = self.sx(t);
            let _ = writeln!(
                self.svg,
                r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y1 + 5.0,
                y1 + 18.0,
                tick_label(t)
            );
        }
        for t in ticks(self.y.0, self.y.1) {
            let py = self.sy(t);
            let _ = writeln!(
                self.svg,
                r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            self.svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 14.0,
            escape(x_label),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: &str, dashed: bool, id: Option<&str>) {
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect();
        let dash = if dashed {
            r#" stroke-dasharray="5,4""#
        } else {
            ""
        };
        let id = id
            .map(|i| format!(r#" id="{}""#, escape(i)))
            .unwrap_or_default();
        let _ = writeln!(
            self.svg,
            r#"<polyline{id} points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn dot(&mut self, x: f64, y: f64, color: &str, r: f64) {
        let _ = writeln!(
            self.svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#,
            self.sx(x),
            self.sy(y)
        );
    }

    fn hrule(&mut self, y: f64, color: &str, id: &str) {
        let _ = writeln!(
            self.svg,
            r#"<line id="{id}" data-value="{y}" x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="{color}" stroke-dasharray="6,4"/>"#,
            WIDTH - RIGHT,
            py = self.sy(y)
        );
    }

    fn vrule(&mut self, x: f64, color: &str, id: &str) {
        let _ = writeln!(
            self.svg,
            r#"<line id="{id}" data-value="{x}" x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="{color}"/>"#,
            HEIGHT - BOTTOM,
            px = self.sx(x)
        );
    }

    fn segment(&mut self, from: (f64, f64), to: (f64, f64), color: &str, id: &str, value: f64) {
        let _ = writeln!(
            self.svg,
            r#"<line id="{id}" data-value="{value}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2.5"/>"#,
            self.sx(from.0),
            self.sy(from.1),
            self.sx(to.0),
            self.sy(to.1)
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 16.0 + i as f64 * 16.0;
            let x = WIDTH - RIGHT - 170.0;
            let _ = writeln!(
                self.svg,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x + 20.0,
                x + 26.0,
                y + 4.0,
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2",
];

/// Figure (a): smallest balance p-value against window half-width.
pub fn render_balance(tables: &Tables) -> CliResult<Vec<Figure>> {
    let t = Rows::parse(tables, SCAN)?;
    let (hw, minp, thr) = (
        t.col("half_width")?,
        t.col("min_pvalue")?,
        t.col("threshold")?,
    );
    let covariates: Vec<(usize, String)> = t
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("p_").map(|c| (i, c.to_string())))
        .collect();
    let mut min_line = Vec::new();
    for row in &t.rows {
        min_line.push((t.req(row, hw)?, t.req(row, minp)?));
    }
    let threshold = t.req(&t.rows[0], thr)?;
    let xs = padded(min_line[0].0, min_line[min_line.len() - 1].0);
    let mut plot = Plot::new(
        "Covariate balance by window",
        "window half-width",
        "p-value",
        xs,
        (0.0, 1.0),
    );
    let mut legend = vec![("min p-value", "black")];
    for (k, (col, name)) in covariates.iter().enumerate() {
        let mut pts = Vec::new();
        for row in &t.rows {
            pts.push((t.req(row, hw)?, t.req(row, *col)?));
        }
        let color = PALETTE[k % PALETTE.len()];
        plot.polyline(&pts, color, true, Some(&format!("covariate-{name}")));
        legend.push((name.as_str(), color));
    }
    plot.polyline(&min_line, "black", false, Some("min-pvalue"));
    for &(x, y) in &min_line {
        plot.dot(x, y, "black", 2.5);
    }
    plot.hrule(threshold, "#d62728", "threshold");
    legend.push(("threshold", "#d62728"));
    plot.legend(&legend);
    Ok(vec![("fig_a_balance.svg".into(), plot.finish())])
}

/// Figure (b): outcome against margin with side means over the window.
pub fn render_rdplots(tables: &Tables) -> CliResult<Vec<Figure>> {
    let t = Rows::parse(tables, RDPLOT)?;
    let (run, val, side, inw) = (
        t.col("running")?,
        t.col("value")?,
        t.col("side")?,
        t.col("in_window")?,
    );
    let mut figures = Vec::new();
    for (outcome, rows) in t.by_outcome()? {
        let mut points = Vec::new();
        let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
        let (mut wlo, mut whi) = (0.0f64, 0.0f64);
        for row in &rows {
            let (x, y) = (t.req(row, run)?, t.req(row, val)?);
            let inside = row[inw] == "true";
            let treated = row[side] == "treated";
            if inside {
                sums[usize::from(treated)] += y;
                counts[usize::from(treated)] += 1;
                wlo = wlo.min(x);
                whi = whi.max(x);
            }
            points.push((x, y, inside));
        }
        let (xlo, xhi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
                (a.0.min(p.0), a.1.max(p.0))
            });
        let (ylo, yhi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
                (a.0.min(p.1), a.1.max(p.1))
            });
        let mut plot = Plot::new(
            &format!("{outcome} around the cutoff"),
            "margin (years from cutoff)",
            &outcome,
            padded(xlo.min(0.0), xhi.max(0.0)),
            padded(ylo, yhi),
        );
        for &(x, y, inside) in &points {
            plot.dot(x, y, if inside { "#1f77b4" } else { "#bbbbbb" }, 2.5);
        }
        plot.vrule(0.0, "black", "cutoff");
        if counts[0] > 0 {
            let m = sums[0] / counts[0] as f64;
            plot.segment((wlo, m), (0.0, m), "#d62728", "control-mean", m);
        }
        if counts[1] > 0 {
            let m = sums[1] / counts[1] as f64;
            plot.segment((0.0, m), (whi, m), "#2ca02c", "treated-mean", m);
        }
        plot.legend(&[("control mean", "#d62728"), ("treated mean", "#2ca02c")]);
        figures.push((format!("fig_b_rdplot_{outcome}.svg"), plot.finish()));
    }
    Ok(figures)
}

/// Figure (c): accepted effect range against window half-width.
pub fn render_sensitivity(tables: &Tables) -> CliResult<Vec<Figure>> {
    let t = Rows::parse(tables, SENSITIVITY)?;
    let (hw, tau, p, alpha) = (
        t.col("half_width")?,
        t.col("tau")?,
        t.col("p")?,
        t.col("alpha")?,
    );
    let mut figures = Vec::new();
    for (outcome, rows) in t.by_outcome()? {
        // half-width -> (accepted taus, all taus)
        let mut windows: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        for row in &rows {
            let (w, tv) = (t.req(row, hw)?, t.req(row, tau)?);
            let accepted = match t.num(row, p)? {
                Some(pv) => pv > t.req(row, alpha)?,
                None => false,
            };
            let idx = match windows.iter().position(|e| e.0 == w) {
                Some(i) => i,
                None => {
                    windows.push((w, Vec::new(), Vec::new()));
                    windows.len() - 1
                }
            };
            windows[idx].2.push(tv);
            if accepted {
                windows[idx].1.push(tv);
            }
        }
        let all_taus = windows.iter().flat_map(|w| w.2.iter().copied());
        let (ylo, yhi) = all_taus.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| {
            (a.0.min(v), a.1.max(v))
        });
        let (xlo, xhi) = windows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, w| {
                (a.0.min(w.0), a.1.max(w.0))
            });
        let mut plot = Plot::new(
            &format!("Accepted effects by window: {outcome}"),
            "window half-width",
            "hypothesized effect",
            padded(xlo, xhi),
            padded(ylo, yhi),
        );
        for (w, accepted, _) in &windows {
            if let (Some(lo), Some(hi)) = (accepted.first(), accepted.last()) {
                plot.segment(
                    (*w, *lo),
                    (*w, *hi),
                    "#1f77b4",
                    &format!("accepted-{w}"),
                    hi - lo,
                );
                plot.dot(*w, *lo, "#1f77b4", 3.0);
                plot.dot(*w, *hi, "#1f77b4", 3.0);
            }
        }
        figures.push((format!("fig_c_sensitivity_{outcome}.svg"), plot.finish()));
    }
    Ok(figures)
}

/// Figure (d): p-value bounds against gamma.
pub fn render_rbounds(tables: &Tables) -> CliResult<Vec<Figure>> {
    let t = Rows::parse(tables, RBOUNDS)?;
    let (g, lo, hi, alpha) = (
        t.col("gamma")?,
        t.col("p_lower")?,
        t.col("p_upper")?,
        t.col("alpha")?,
    );
    let mut figures = Vec::new();
    for (outcome, rows) in t.by_outcome()? {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for row in &rows {
            let gamma = t.req(row, g)?;
            lower.push((gamma, t.req(row, lo)?));
            upper.push((gamma, t.req(row, hi)?));
        }
        let xs = padded(lower[0].0, lower[lower.len() - 1].0);
        let mut plot = Plot::new(
            &format!("p-value bounds: {outcome}"),
            "gamma",
            "p-value",
            xs,
            (0.0, 1.0),
        );
        plot.polyline(&lower, "#1f77b4", false, Some("p-lower"));
        plot.polyline(&upper, "#ff7f0e", false, Some("p-upper"));
        for (&a, &b) in lower.iter().zip(&upper) {
            plot.dot(a.0, a.1, "#1f77b4", 3.0);
            plot.dot(b.0, b.1, "#ff7f0e", 3.0);
        }
        plot.hrule(t.req(rows[0], alpha)?, "#d62728", "alpha");
        plot.legend(&[
            ("p lower", "#1f77b4"),
            ("p upper", "#ff7f0e"),
            ("alpha", "#d62728"),
        ]);
        figures.push((format!("fig_d_rbounds_{outcome}.svg"), plot.finish()));
    }
    Ok(figures)
}

/// All four figure families; every table must be present.
pub fn render_figures(tables: &Tables) -> CliResult<Vec<Figure>> {
    let mut out = render_balance(tables)?;
    out.extend(render_rdplots(tables)?);
    out.extend(render_sensitivity(tables)?);
    out.extend(render_rbounds(tables)?);
    Ok(out)
}

/// Reads `<name>.csv` tables from `dir` and renders every figure family.
pub fn render_from_dir(dir: &Path) -> CliResult<Vec<Figure>> {
    let mut tables = Tables::new();
    for name in [SCAN, RDPLOT, SENSITIVITY, RBOUNDS] {
        if let Ok(bytes) = std::fs::read(dir.join(format!("{name}.csv"))) {
            tables.insert(name.to_string(), bytes);
        }
    }
    render_figures(&tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(entries: &[(&str, &str)]) -> Tables {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.as_bytes().to_vec()))
            .collect()
    }

    #[test]
    fn balance_figure_has_threshold_rule() {
        let t = tables(&[(
            SCAN,
            "half_width,left,right,n_control,n_treated,min_pvalue,threshold,p_pbf\n1,-1,1,3,3,0.9,0.15,0.9\n1.125,-1.125,1.125,3,3,0.1,0.15,0.1\n",
        )]);
        let figs = render_balance(&t).unwrap();
        assert_eq!(figs.len(), 1);
        let svg = &figs[0].1;
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains(r#"id="threshold" data-value="0.15""#));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_sensitivity_table_is_named() {
        let t = tables(&[(SENSITIVITY, "outcome,half_width,left,right,tau,p,alpha\n")]);
        let err = render_sensitivity(&t).unwrap_err();
        assert!(err.to_string().contains("\"sensitivity\""), "{err}");
        let err = render_figures(&Tables::new()).unwrap_err();
        assert!(err.to_string().contains("\"scan\""), "{err}");
    }

    #[test]
    fn rdplot_side_means() {
        let t = tables(&[(
            RDPLOT,
            "outcome,unit_id,running,value,side,in_window\ny,a,-1,4,control,true\ny,a,0,1,treated,true\ny,b,-1,6,control,true\ny,b,0,3,treated,true\ny,b,-5,100,control,false\n",
        )]);
        let svg = &render_rdplots(&t).unwrap()[0].1;
        assert!(svg.contains(r#"id="control-mean" data-value="5""#));
        assert!(svg.contains(r#"id="treated-mean" data-value="2""#));
        assert!(svg.contains(r#"id="cutoff""#));
    }

    #[test]
    fn sensitivity_intervals_skip_na_cells() {
        let t = tables(&[(
            SENSITIVITY,
            "outcome,half_width,left,right,tau,p,alpha\ny,1,-1,1,0,0.5,0.05\ny,1,-1,1,1,0.01,0.05\ny,2,-2,2,0,NA,0.05\ny,2,-2,2,1,NA,0.05\n",
        )]);
        let svg = &render_sensitivity(&t).unwrap()[0].1;
        assert!(svg.contains(r#"id="accepted-1""#));
        assert!(!svg.contains(r#"id="accepted-2""#));
    }

    #[test]
    fn ticks_cover_range() {
        let t = ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tick_label(0.30000000000000004), "0.3");
    }
}
