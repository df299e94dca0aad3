//! Ingest, window selection, inference, sensitivity and bounds, with every
//! table, figure and summary written into one output directory.

use std::path::{Path, PathBuf};

use locrand_core::data::{read_panel_csv, recenter};
use locrand_core::inference::{confidence_interval, CiStatus};
use locrand_core::rng::derive_seed;
use locrand_core::sensitivity::{gamma_bounds, sensitivity_surface, WindowCi};
use locrand_core::winselect::scan_windows;
use locrand_core::{
    Dataset, Error, GammaBoundsResult, GammaBoundsSpec, InferenceResult, InferenceSpec,
    PanelRecord, SensitivitySpec, SensitivitySurface, StopReason, Window, WindowScanResult,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::render::{self, Tables};
use crate::tables::{self, InferenceRow};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const SCAN_TAG: u64 = 1;
const INFERENCE_TAG: u64 = 2;
const SENSITIVITY_TAG: u64 = 3;
const RBOUNDS_TAG: u64 = 4;

/// Which analyses to run. Window selection also runs whenever a later stage
/// needs the recommended window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub scan: bool,
    pub inference: bool,
    pub sensitivity: bool,
    pub rbounds: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        scan: true,
        inference: true,
        sensitivity: true,
        rbounds: true,
    };
    pub const NONE: Stages = Stages {
        scan: false,
        inference: false,
        sensitivity: false,
        rbounds: false,
    };
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub force: bool,
}

/// Loaded panel plus the hash of the raw file.
#[derive(Debug, Clone)]
pub struct Panel {
    pub records: Vec<PanelRecord>,
    pub sha256: String,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_panel(config: &RunConfig) -> CliResult<Panel> {
    let bytes = std::fs::read(&config.data_path).map_err(|source| Error::Io {
        path: config.data_path.clone(),
        source,
    })?;
    let records = read_panel_csv(bytes.as_slice(), &config.schema)?;
    if records.is_empty() {
        return Err(
            Error::Validation(format!("{} has no data rows", config.data_path.display())).into(),
        );
    }
    Ok(Panel {
        records,
        sha256: hex_digest(&bytes),
    })
}

#[derive(Debug, Clone)]
pub struct OutcomeAnalysis {
    pub name: String,
    pub dataset: Dataset,
    pub window: Option<Window>,
    pub inference: Option<InferenceResult>,
    pub surface: Option<SensitivitySurface>,
    pub bounds: Option<(Window, GammaBoundsResult)>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub stages: Stages,
    pub seed: u64,
    pub data_sha256: String,
    pub n_rows: usize,
    pub n_units: usize,
    pub scan: Option<WindowScanResult>,
    pub outcomes: Vec<OutcomeAnalysis>,
}

fn stage_needs_scan(config: &RunConfig, stages: Stages) -> bool {
    let inference = stages.inference
        && config
            .outcomes
            .iter()
            .any(|o| config.window_override(o).is_none());
    let rbounds = stages.rbounds
        && config.rbounds_window().is_none()
        && config
            .outcomes
            .iter()
            .any(|o| config.window_override(o).is_none());
    stages.scan || inference || rbounds
}

fn no_window(scan: &WindowScanResult, outcome: &str) -> CliError {
    let reason = match scan.stop_reason {
        StopReason::InsufficientObs => "too few observations in the smallest window",
        StopReason::ThresholdCrossed => "the smallest window already fails the balance threshold",
        StopReason::MaxWindowReached => "no window was scanned",
    };
    Error::Degenerate(format!(
        "window selection recommended no window for \"{outcome}\" ({reason}); set inference.outcomes.{outcome}.window"
    ))
    .into()
}

pub fn analyze(config: &RunConfig, stages: Stages) -> CliResult<Analysis> {
    config.validate()?;
    let panel = load_panel(config)?;
    let seed = config.seed;
    let mut units: Vec<&str> = panel.records.iter().map(|r| r.unit_id.as_str()).collect();
    units.sort_unstable();
    units.dedup();

    let datasets = config
        .outcomes
        .iter()
        .map(|name| recenter(&panel.records, config.cutoff_year, name, &config.covariates))
        .collect::<Result<Vec<_>, _>>()?;

    let scan = if stage_needs_scan(config, stages) {
        let plan = config.plan.with_seed(derive_seed(seed, &[SCAN_TAG]));
        let result = scan_windows(&datasets[0], &config.scan.spec(plan))?;
        log::info!(
            "window scan: {} rows, stop {:?}, recommended {:?}",
            result.rows.len(),
            result.stop_reason,
            result.recommended
        );
        Some(result)
    } else {
        None
    };

    let mut outcomes = Vec::with_capacity(config.outcomes.len());
    for (k, (name, dataset)) in config.outcomes.iter().zip(datasets).enumerate() {
        let k = k as u64;
        let window = match (config.window_override(name), &scan) {
            (Some(w), _) => Some(w),
            (None, Some(s)) => s.recommended,
            (None, None) => None,
        };
        let require_window =
            || window.ok_or_else(|| no_window(scan.as_ref().expect("scan ran"), name));

        let inference = if stages.inference {
            let w = require_window()?;
            let spec = InferenceSpec {
                window: w,
                stat: config.inference.stat,
                poly_order: config.inference.poly_order,
                plan: config
                    .plan
                    .with_seed(derive_seed(seed, &[INFERENCE_TAG, k])),
                alpha: config.inference.alpha,
                tau_grid: config.tau_grid(name),
                null_tau: config.inference.null_tau,
            };
            let r = confidence_interval(&dataset, &spec)?;
            log::info!("{name}: estimate {} p {}", r.point_estimate, r.p_value.p);
            Some(r)
        } else {
            None
        };

        let surface = if stages.sensitivity {
            let windows = config
                .sensitivity
                .half_widths
                .iter()
                .map(|&w| Window::symmetric(w))
                .collect::<Result<Vec<_>, _>>()?;
            let spec = SensitivitySpec {
                windows,
                taus: config.sensitivity_taus(name),
                stat: config.sensitivity.stat,
                plan: config
                    .plan
                    .with_seed(derive_seed(seed, &[SENSITIVITY_TAG, k])),
                alpha: config.sensitivity.alpha,
                poly_order: config.sensitivity.poly_order,
            };
            Some(sensitivity_surface(&dataset, &spec)?)
        } else {
            None
        };

        let bounds = if stages.rbounds {
            let w = match config.rbounds_window() {
                Some(w) => w,
                None => require_window()?,
            };
            let spec = GammaBoundsSpec {
                gammas: config.rbounds.gammas.clone(),
                window: w,
                stat: config.rbounds.stat,
                plan: config.plan.with_seed(derive_seed(seed, &[RBOUNDS_TAG, k])),
            };
            Some((w, gamma_bounds(&dataset, &spec)?))
        } else {
            None
        };

        outcomes.push(OutcomeAnalysis {
            name: name.clone(),
            dataset,
            window,
            inference,
            surface,
            bounds,
        });
    }

    Ok(Analysis {
        stages,
        seed,
        data_sha256: panel.sha256,
        n_rows: panel.records.len(),
        n_units: units.len(),
        scan,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSummary {
    pub covariates: Vec<String>,
    pub threshold: f64,
    pub n_windows: usize,
    pub stop_reason: StopReason,
    pub recommended: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowCiSummary {
    pub half_width: f64,
    pub status: &'static str,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSummary {
    pub gamma: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    /// `p_upper < alpha`: the rejection survives this much hidden bias.
    pub rejects: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceSummary {
    pub window: [f64; 2],
    pub n_control: usize,
    pub n_treated: usize,
    pub point_estimate: f64,
    pub null_tau: f64,
    pub p_value: f64,
    pub significant_at_5: bool,
    pub significant_at_10: bool,
    pub alpha: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ci_status: CiStatus,
    pub ci_contiguous: bool,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsSummary {
    pub window: [f64; 2],
    pub alpha: f64,
    pub rows: Vec<GammaSummary>,
    /// Every gamma gives the same decision.
    pub robust: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSummary {
    pub name: String,
    pub inference: Option<InferenceSummary>,
    pub sensitivity: Option<Vec<WindowCiSummary>>,
    pub rbounds: Option<BoundsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub data_sha256: String,
    pub n_rows: usize,
    pub n_units: usize,
    pub cutoff_year: i32,
    pub scan: Option<ScanSummary>,
    pub outcomes: Vec<OutcomeSummary>,
    pub warnings: Vec<String>,
}

fn pair(w: Window) -> [f64; 2] {
    [w.left, w.right]
}

pub fn summarize(config: &RunConfig, analysis: &Analysis) -> Summary {
    let scan = analysis.scan.as_ref().map(|s| ScanSummary {
        covariates: s.covariate_names.clone(),
        threshold: s.threshold,
        n_windows: s.rows.len(),
        stop_reason: s.stop_reason,
        recommended: s.recommended.map(pair),
    });
    let mut warnings = Vec::new();
    let outcomes = analysis
        .outcomes
        .iter()
        .map(|o| {
            let inference = o.inference.as_ref().map(|r| InferenceSummary {
                window: pair(o.window.expect("inference ran on a window")),
                n_control: r.n_control,
                n_treated: r.n_treated,
                point_estimate: r.point_estimate,
                null_tau: config.inference.null_tau,
                p_value: r.p_value.p,
                significant_at_5: r.p_value.p < 0.05,
                significant_at_10: r.p_value.p < 0.10,
                alpha: config.inference.alpha,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                ci_status: r.status,
                ci_contiguous: r.accepted_taus_contiguous,
                notices: r.notices.clone(),
            });
            let sensitivity = o.surface.as_ref().map(|s| {
                warnings.extend(s.warnings.iter().map(|w| format!("{}: {w}", o.name)));
                s.windows
                    .iter()
                    .zip(&s.per_window_ci)
                    .map(|(w, ci)| {
                        let (status, ci_low, ci_high) = match *ci {
                            WindowCi::Interval { low, high, .. } => ("ok", Some(low), Some(high)),
                            WindowCi::Empty => ("empty", None, None),
                            WindowCi::NotComputed => ("not_computed", None, None),
                        };
                        WindowCiSummary {
                            half_width: w.half_width(),
                            status,
                            ci_low,
                            ci_high,
                        }
                    })
                    .collect()
            });
            let rbounds = o.bounds.as_ref().map(|(w, b)| {
                let alpha = config.rbounds.alpha;
                let rows: Vec<GammaSummary> = b
                    .rows
                    .iter()
                    .map(|r| GammaSummary {
                        gamma: r.gamma,
                        p_lower: r.p_lower,
                        p_upper: r.p_upper,
                        rejects: r.p_upper < alpha,
                    })
                    .collect();
                let robust = rows.iter().all(|r| r.rejects == rows[0].rejects);
                BoundsSummary {
                    window: pair(*w),
                    alpha,
                    rows,
                    robust,
                }
            });
            OutcomeSummary {
                name: o.name.clone(),
                inference,
                sensitivity,
                rbounds,
            }
        })
        .collect();
    Summary {
        seed: analysis.seed,
        data_sha256: analysis.data_sha256.clone(),
        n_rows: analysis.n_rows,
        n_units: analysis.n_units,
        cutoff_year: config.cutoff_year,
        scan,
        outcomes,
        warnings,
    }
}

/// One emitted file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// File names a run with these stages will write, known before any analysis.
pub fn planned_files(config: &RunConfig, stages: Stages) -> Vec<String> {
    let mut names = Vec::new();
    let per_outcome = |prefix: &str, names: &mut Vec<String>| {
        for o in &config.outcomes {
            names.push(format!("{prefix}_{o}.svg"));
        }
    };
    if stage_needs_scan(config, stages) {
        names.push(format!("{}.csv", tables::SCAN));
        names.push("fig_a_balance.svg".into());
    }
    if stages.inference {
        for t in [tables::INFERENCE, tables::INFERENCE_GRID, tables::RDPLOT] {
            names.push(format!("{t}.csv"));
        }
        per_outcome("fig_b_rdplot", &mut names);
    }
    if stages.sensitivity {
        names.push(format!("{}.csv", tables::SENSITIVITY));
        names.push(format!("{}.csv", tables::SENSITIVITY_CI));
        per_outcome("fig_c_sensitivity", &mut names);
    }
    if stages.rbounds {
        names.push(format!("{}.csv", tables::RBOUNDS));
        per_outcome("fig_d_rbounds", &mut names);
    }
    names.push(SUMMARY_FILE.into());
    names.push(MANIFEST_FILE.into());
    names.sort();
    names
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("summary types serialize");
    bytes.push(b'\n');
    bytes
}

/// Tables, figures, summary and manifest for a finished analysis.
pub fn artifacts(config: &RunConfig, analysis: &Analysis) -> CliResult<(Summary, Vec<Artifact>)> {
    let mut tables = Tables::new();
    if let Some(scan) = &analysis.scan {
        tables.insert(tables::SCAN.into(), tables::scan_table(scan));
    }
    let stages = analysis.stages;
    let outs = &analysis.outcomes;
    if stages.inference {
        let rows: Vec<InferenceRow> = outs
            .iter()
            .map(|o| InferenceRow {
                outcome: &o.name,
                window: o.window.expect("inference ran on a window"),
                alpha: config.inference.alpha,
                null_tau: config.inference.null_tau,
                result: o.inference.as_ref().expect("inference ran"),
            })
            .collect();
        tables.insert(tables::INFERENCE.into(), tables::inference_table(&rows));
        tables.insert(
            tables::INFERENCE_GRID.into(),
            tables::inference_grid_table(&rows),
        );
        let plots: Vec<_> = outs
            .iter()
            .map(|o| {
                (
                    o.name.as_str(),
                    &o.dataset,
                    o.window.expect("inference ran on a window"),
                )
            })
            .collect();
        tables.insert(tables::RDPLOT.into(), tables::rdplot_table(&plots));
    }
    if stages.sensitivity {
        let surfaces: Vec<_> = outs
            .iter()
            .map(|o| {
                (
                    o.name.as_str(),
                    o.surface.as_ref().expect("sensitivity ran"),
                )
            })
            .collect();
        tables.insert(
            tables::SENSITIVITY.into(),
            tables::sensitivity_table(&surfaces),
        );
        tables.insert(
            tables::SENSITIVITY_CI.into(),
            tables::sensitivity_ci_table(&surfaces),
        );
    }
    if stages.rbounds {
        let bounds: Vec<_> = outs
            .iter()
            .map(|o| {
                let (w, b) = o.bounds.as_ref().expect("rbounds ran");
                (o.name.as_str(), *w, config.rbounds.alpha, b)
            })
            .collect();
        tables.insert(tables::RBOUNDS.into(), tables::rbounds_table(&bounds));
    }

    let mut figures = Vec::new();
    if analysis.scan.is_some() {
        figures.extend(render::render_balance(&tables)?);
    }
    if stages.inference {
        figures.extend(render::render_rdplots(&tables)?);
    }
    if stages.sensitivity {
        figures.extend(render::render_sensitivity(&tables)?);
    }
    if stages.rbounds {
        figures.extend(render::render_rbounds(&tables)?);
    }

    let summary = summarize(config, analysis);
    let mut out: Vec<Artifact> = tables
        .into_iter()
        .map(|(name, bytes)| Artifact {
            name: format!("{name}.csv"),
            bytes,
        })
        .chain(figures.into_iter().map(|(name, svg)| Artifact {
            name,
            bytes: svg.into_bytes(),
        }))
        .collect();
    out.push(Artifact {
        name: SUMMARY_FILE.into(),
        bytes: json_bytes(&summary),
    });
    out.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest: Vec<ManifestEntry> = out
        .iter()
        .map(|a| ManifestEntry {
            file: a.name.clone(),
            bytes: a.bytes.len(),
            sha256: hex_digest(&a.bytes),
        })
        .collect();
    out.push(Artifact {
        name: MANIFEST_FILE.into(),
        bytes: json_bytes(&manifest),
    });
    Ok((summary, out))
}

fn check_overwrite(dir: &Path, names: &[String], force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    match names.iter().map(|n| dir.join(n)).find(|p| p.exists()) {
        Some(existing) => Err(CliError::Overwrite(existing)),
        None => Ok(()),
    }
}

/// Writes every artifact, refusing to replace existing files unless forced.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact], force: bool) -> CliResult<()> {
    let names: Vec<String> = artifacts.iter().map(|a| a.name.clone()).collect();
    check_overwrite(dir, &names, force)?;
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Write { path, source }
    };
    std::fs::create_dir_all(dir).map_err(write_err(dir))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(write_err(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub files: Vec<String>,
}

/// Runs the selected stages and writes their artifacts into `options.out_dir`.
pub fn run(config: &RunConfig, stages: Stages, options: &RunOptions) -> CliResult<RunReport> {
    config.validate()?;
    check_overwrite(
        &options.out_dir,
        &planned_files(config, stages),
        options.force,
    )?;
    let analysis = analyze(config, stages)?;
    let (summary, files) = artifacts(config, &analysis)?;
    write_artifacts(&options.out_dir, &files, options.force)?;
    Ok(RunReport {
        out_dir: options.out_dir.clone(),
        summary,
        files: files.into_iter().map(|a| a.name).collect(),
    })
}

/// The full analysis: scan, inference, sensitivity and bounds.
pub fn run_pipeline(config: &RunConfig, options: &RunOptions) -> CliResult<RunReport> {
    run(config, Stages::ALL, options)
}
