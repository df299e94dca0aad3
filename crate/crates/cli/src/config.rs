//! Run configuration read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use locrand_core::{
    GridSpec, PanelSchema, PermutationPlan, PlanMode, StatKind, Window, WindowScanSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::synth::SynthSpec;

/// Randomization settings shared by every stage; each stage derives its own
/// seed from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub mode: PlanMode,
    pub draws: u64,
    pub exhaustive_cap: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let plan = PermutationPlan::default();
        Self {
            mode: plan.mode,
            draws: plan.draws,
            exhaustive_cap: plan.exhaustive_cap,
        }
    }
}

impl PlanConfig {
    pub fn with_seed(&self, seed: u64) -> PermutationPlan {
        PermutationPlan {
            mode: self.mode,
            draws: self.draws,
            seed,
            exhaustive_cap: self.exhaustive_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub w_min: f64,
    pub w_max: f64,
    pub increment: f64,
    pub stat: StatKind,
    pub threshold: f64,
    pub min_obs_per_side: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let d = WindowScanSpec::default();
        Self {
            w_min: d.w_min,
            w_max: d.w_max,
            increment: d.increment,
            stat: d.stat,
            threshold: d.threshold,
            min_obs_per_side: d.min_obs_per_side,
        }
    }
}

impl ScanConfig {
    pub fn spec(&self, plan: PermutationPlan) -> WindowScanSpec {
        WindowScanSpec {
            w_min: self.w_min,
            w_max: self.w_max,
            increment: self.increment,
            stat: self.stat,
            plan,
            threshold: self.threshold,
            min_obs_per_side: self.min_obs_per_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeInference {
    pub tau_grid: GridSpec,
    /// `[left, right]`; replaces the recommended window for this outcome.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub stat: StatKind,
    pub alpha: f64,
    pub poly_order: usize,
    pub null_tau: f64,
    pub outcomes: BTreeMap<String, OutcomeInference>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            stat: StatKind::DiffMeans,
            alpha: 0.05,
            poly_order: 0,
            null_tau: 0.0,
            outcomes: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub half_widths: Vec<f64>,
    pub stat: StatKind,
    pub alpha: f64,
    pub poly_order: usize,
    /// Per-outcome tau grids; the inference grid is used when absent.
    pub taus: BTreeMap<String, GridSpec>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            half_widths: vec![2.875, 3.0, 3.125, 3.25],
            stat: StatKind::DiffMeans,
            alpha: 0.05,
            poly_order: 0,
            taus: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RboundsConfig {
    pub gammas: Vec<f64>,
    pub stat: StatKind,
    pub alpha: f64,
    /// `[left, right]`; the recommended window is used when absent.
    pub window: Option<[f64; 2]>,
}

impl Default for RboundsConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0, 1.5, 2.0],
            stat: StatKind::DiffMeans,
            alpha: 0.05,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths are resolved against the config file's directory.
    pub data_path: PathBuf,
    #[serde(default)]
    pub schema: PanelSchema,
    pub cutoff_year: i32,
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub rbounds: RboundsConfig,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn field(name: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {message}"))
}

fn to_window(name: &str, bounds: [f64; 2]) -> CliResult<Window> {
    Window::new(bounds[0], bounds[1]).map_err(|e| field(name, e))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text)
            .map_err(|e| CliError::Config(e.message().to_string() + &span_hint(text, e.span())))
    }

    /// Reads and validates a config file, resolving `data_path` relative to it.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if config.data_path.is_relative() {
            if let Some(dir) = path.parent() {
                config.data_path = dir.join(&config.data_path);
            }
        }
        if let Some(out) = &config.output_dir {
            if out.is_relative() {
                if let Some(dir) = path.parent() {
                    config.output_dir = Some(dir.join(out));
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.outcomes.is_empty() {
            return Err(field("outcomes", "at least one outcome is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.outcomes {
            if !seen.insert(name) {
                return Err(field("outcomes", format!("\"{name}\" is listed twice")));
            }
            if !self.schema.outcomes.contains_key(name) {
                return Err(field(
                    "outcomes",
                    format!("\"{name}\" has no column in schema.outcomes"),
                ));
            }
        }
        for name in &self.covariates {
            if !self.schema.covariates.contains_key(name) {
                return Err(field(
                    "covariates",
                    format!("\"{name}\" has no column in schema.covariates"),
                ));
            }
        }

        let plan = self.plan.with_seed(self.seed);
        plan.validate().map_err(|e| field("plan", e))?;
        self.scan
            .spec(plan)
            .validate()
            .map_err(|e| field("scan", e))?;

        let alphas = [
            ("inference.alpha", self.inference.alpha),
            ("sensitivity.alpha", self.sensitivity.alpha),
            ("rbounds.alpha", self.rbounds.alpha),
        ];
        for (name, alpha) in alphas {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(field(name, format!("must lie in (0, 1), got {alpha}")));
            }
        }
        if !self.inference.null_tau.is_finite() {
            return Err(field("inference.null_tau", "must be finite"));
        }
        for name in self.inference.outcomes.keys() {
            if !self.outcomes.contains(name) {
                return Err(field(
                    &format!("inference.outcomes.{name}"),
                    "is not one of the configured outcomes",
                ));
            }
        }
        for name in &self.outcomes {
            let key = format!("inference.outcomes.{name}");
            let entry = self
                .inference
                .outcomes
                .get(name)
                .ok_or_else(|| field(&key, "missing; every outcome needs a tau_grid"))?;
            entry
                .tau_grid
                .validate()
                .map_err(|e| field(&format!("{key}.tau_grid"), e))?;
            if let Some(w) = entry.window {
                to_window(&format!("{key}.window"), w)?;
            }
        }
        if self.needs_scan() && self.covariates.is_empty() {
            return Err(field(
                "covariates",
                "window selection needs at least one covariate (or set a window for every outcome)",
            ));
        }

        if self.sensitivity.half_widths.is_empty() {
            return Err(field("sensitivity.half_widths", "must not be empty"));
        }
        for &w in &self.sensitivity.half_widths {
            if !(w.is_finite() && w >= 0.0) {
                return Err(field(
                    "sensitivity.half_widths",
                    format!("invalid half-width {w}"),
                ));
            }
        }
        for (name, grid) in &self.sensitivity.taus {
            if !self.outcomes.contains(name) {
                return Err(field(
                    &format!("sensitivity.taus.{name}"),
                    "is not one of the configured outcomes",
                ));
            }
            grid.validate()
                .map_err(|e| field(&format!("sensitivity.taus.{name}"), e))?;
        }

        let g = &self.rbounds.gammas;
        if g.is_empty()
            || g.iter().any(|v| !(v.is_finite() && *v >= 1.0))
            || g.windows(2).any(|p| p[0] > p[1])
        {
            return Err(field(
                "rbounds.gammas",
                "must be a non-empty ascending list of values >= 1",
            ));
        }
        if let Some(w) = self.rbounds.window {
            to_window("rbounds.window", w)?;
        }
        if let Some(synth) = &self.synth {
            synth.validate().map_err(|e| field("synth", e))?;
        }
        Ok(())
    }

    /// Whether some stage relies on the recommended window.
    pub fn needs_scan(&self) -> bool {
        self.rbounds.window.is_none()
            || self.outcomes.iter().any(|o| {
                self.inference
                    .outcomes
                    .get(o)
                    .map_or(true, |e| e.window.is_none())
            })
    }

    pub fn window_override(&self, outcome: &str) -> Option<Window> {
        self.inference
            .outcomes
            .get(outcome)
            .and_then(|e| e.window)
            .and_then(|w| Window::new(w[0], w[1]).ok())
    }

    pub fn rbounds_window(&self) -> Option<Window> {
        self.rbounds
            .window
            .and_then(|w| Window::new(w[0], w[1]).ok())
    }

    pub fn tau_grid(&self, outcome: &str) -> GridSpec {
        self.inference.outcomes[outcome].tau_grid
    }

    pub fn sensitivity_taus(&self, outcome: &str) -> Vec<f64> {
        self.sensitivity
            .taus
            .get(outcome)
            .copied()
            .unwrap_or_else(|| self.tau_grid(outcome))
            .points()
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        data_path = "panel.csv"
        cutoff_year = 2011
        outcomes = ["gini"]
        covariates = ["pbf"]
        seed = 7

        [inference.outcomes.gini]
        tau_grid = { lo = -0.1, hi = 0.1, step = 0.01 }
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.scan.w_min, 1.0);
        assert_eq!(c.sensitivity.half_widths, vec![2.875, 3.0, 3.125, 3.25]);
        assert_eq!(c.rbounds.gammas, vec![1.0, 1.5, 2.0]);
        assert!(c.needs_scan());
        assert_eq!(c.sensitivity_taus("gini").len(), 21);
    }

    #[test]
    fn empty_outcomes_names_the_field() {
        let text = MINIMAL.replace(r#"outcomes = ["gini"]"#, "outcomes = []");
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("outcomes"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[scan]\nwidth = 3\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            ("[scan]\nthreshold = 2.0\n", "scan"),
            ("[rbounds]\ngammas = [2.0, 1.0]\n", "rbounds.gammas"),
            (
                "[inference.outcomes.male_income]\ntau_grid = { lo = 0, hi = 1, step = 1 }\n",
                "inference.outcomes.male_income",
            ),
            (
                "[sensitivity]\nhalf_widths = []\n",
                "sensitivity.half_widths",
            ),
            ("[plan]\ndraws = 0\n", "plan"),
        ];
        for (extra, name) in cases {
            let text = format!("{MINIMAL}\n{extra}");
            let err = RunConfig::from_toml(&text)
                .and_then(|c| c.validate())
                .unwrap_err();
            assert!(err.to_string().contains(name), "{extra}: {err}");
        }
    }

    #[test]
    fn missing_tau_grid_is_reported() {
        let text = MINIMAL.replace(
            r#"outcomes = ["gini"]"#,
            r#"outcomes = ["gini", "male_income"]"#,
        );
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(
            err.to_string().contains("inference.outcomes.male_income"),
            "{err}"
        );
    }

    #[test]
    fn covariates_required_only_when_scanning() {
        let text = MINIMAL.replace(r#"covariates = ["pbf"]"#, "");
        assert!(RunConfig::from_toml(&text).unwrap().validate().is_err());
        let text = text.replace(
            "tau_grid = { lo = -0.1, hi = 0.1, step = 0.01 }",
            "tau_grid = { lo = -0.1, hi = 0.1, step = 0.01 }\nwindow = [-3.0, 3.0]",
        ) + "\n[rbounds]\nwindow = [-3.0, 3.0]\n";
        let c = RunConfig::from_toml(&text).unwrap();
        c.validate().unwrap();
        assert!(!c.needs_scan());
    }
}
