//! Sensitivity of the randomization conclusions.
//!
//! Two views: a p-value surface over (window, hypothesized effect), and
//! bounds on the p-value when units' treatment odds may differ by up to a
//! factor `gamma`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_window, subset_window, Dataset, Window};
use crate::error::{Error, Result};
use crate::inference::sharp_null_pvalue;
use crate::rng::DrawStreams;
use crate::stats::{tie_tolerance, PermutationPlan, PlanMode, Pooled, StatKind};

/// Token written for cells that could not be computed.
pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub windows: Vec<Window>,
    pub taus: Vec<f64>,
    pub stat: StatKind,
    pub plan: PermutationPlan,
    pub alpha: f64,
    pub poly_order: usize,
}

impl SensitivitySpec {
    pub fn new(windows: Vec<Window>, taus: Vec<f64>) -> Self {
        Self {
            windows,
            taus,
            stat: StatKind::DiffMeans,
            plan: PermutationPlan::default(),
            alpha: 0.05,
            poly_order: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() || self.taus.is_empty() {
            return Err(Error::InvalidSpec(
                "sensitivity needs at least one window and one tau".into(),
            ));
        }
        if self.taus.iter().any(|t| !t.is_finite()) || self.taus.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidSpec(
                "taus must be finite and strictly ascending".into(),
            ));
        }
        for w in &self.windows {
            Window::new(w.left, w.right)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.plan.validate()
    }
}

/// Accepted-effect hull for one window of a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WindowCi {
    Interval {
        low: f64,
        high: f64,
        contiguous: bool,
    },
    /// Every tau was rejected.
    Empty,
    /// The window had an empty side.
    NotComputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySurface {
    pub windows: Vec<Window>,
    pub taus: Vec<f64>,
    pub alpha: f64,
    /// `p[w][t]`; `None` where the window could not be analysed.
    pub p: Vec<Vec<Option<f64>>>,
    pub per_window_ci: Vec<WindowCi>,
    pub warnings: Vec<String>,
}

pub fn sensitivity_surface(
    dataset: &Dataset,
    spec: &SensitivitySpec,
) -> Result<SensitivitySurface> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let usable: Vec<bool> = spec
        .windows
        .iter()
        .map(|w| {
            let ok = subset_window(dataset, w).is_ok();
            if !ok {
                warnings.push(format!("window {w} has an empty side; row not computed"));
            }
            ok
        })
        .collect();
    if !usable.iter().any(|&u| u) {
        return Err(Error::Degenerate(
            "no sensitivity window has observations on both sides".into(),
        ));
    }

    let n_taus = spec.taus.len();
    let cells = (0..spec.windows.len() * n_taus)
        .into_par_iter()
        .map(|cell| {
            let (w, t) = (cell / n_taus, cell % n_taus);
            if !usable[w] {
                return Ok(None);
            }
            sharp_null_pvalue(
                dataset,
                &spec.windows[w],
                spec.stat,
                spec.poly_order,
                &spec.plan,
                spec.taus[t],
            )
            .map(|r| Some(r.p))
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<Vec<Option<f64>>> = cells.chunks(n_taus).map(|row| row.to_vec()).collect();

    let per_window_ci = p
        .iter()
        .zip(&usable)
        .map(|(row, &ok)| {
            if !ok {
                return WindowCi::NotComputed;
            }
            let accepted: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, p)| p.is_some_and(|p| p > spec.alpha))
                .map(|(i, _)| i)
                .collect();
            match (accepted.first(), accepted.last()) {
                (Some(&a), Some(&b)) => WindowCi::Interval {
                    low: spec.taus[a],
                    high: spec.taus[b],
                    contiguous: b - a + 1 == accepted.len(),
                },
                _ => WindowCi::Empty,
            }
        })
        .collect();

    Ok(SensitivitySurface {
        windows: spec.windows.clone(),
        taus: spec.taus.clone(),
        alpha: spec.alpha,
        p,
        per_window_ci,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBoundsSpec {
    pub gammas: Vec<f64>,
    pub window: Window,
    pub stat: StatKind,
    pub plan: PermutationPlan,
}

impl GammaBoundsSpec {
    pub fn new(window: Window) -> Self {
        Self {
            gammas: vec![1.0, 1.5, 2.0],
            window,
            stat: StatKind::DiffMeans,
            plan: PermutationPlan::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty()
            || self.gammas.iter().any(|g| !(g.is_finite() && *g >= 1.0))
            || self.gammas.windows(2).any(|p| p[0] > p[1])
        {
            return Err(Error::InvalidSpec(
                "gammas must be a non-empty ascending list of finite values >= 1".into(),
            ));
        }
        Window::new(self.window.left, self.window.right)?;
        self.plan.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub p_lower: f64,
    pub p_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBoundsResult {
    pub rows: Vec<GammaRow>,
    pub statistic_observed: f64,
    /// +1 when treated outcomes sit above control outcomes, -1 otherwise.
    pub direction: f64,
    pub n: usize,
    pub exhaustive: bool,
}

/// Below this probability of drawing a usable assignment the model is degenerate.
const MIN_VALID_MASS: f64 = 1e-9;

/// p-value bounds under biased Bernoulli assignment.
///
/// Each unit is treated independently with probability `1/(1+gamma)` or
/// `gamma/(1+gamma)`, conditioned on both sides being non-empty. One bound
/// gives the high probability to units whose outcome lies above the pooled
/// median in the direction of the observed effect, the other to units below
/// it. For each pattern the one-sided tail `P(T >= t_obs)` in the observed
/// direction is doubled (and capped at 1) to give a two-sided p-value; the
/// smaller of the two is `p_lower` and the larger `p_upper`. At `gamma = 1`
/// both patterns coincide with fair-coin assignment.
pub fn gamma_bounds(dataset: &Dataset, spec: &GammaBoundsSpec) -> Result<GammaBoundsResult> {
    spec.validate()?;
    let split = subset_window(dataset, &spec.window)?;
    let (pooled, observed_mask) =
        Pooled::new(&split.treated_outcomes(), &split.control_outcomes())?;
    let n = pooled.len();
    let n_treated_obs = split.treated.len();
    let direction = pooled.observed_direction(spec.stat, &observed_mask, n_treated_obs);
    let observed = pooled.directional(spec.stat, &observed_mask, n_treated_obs, direction);
    let statistic_observed = pooled.raw(spec.stat, &observed_mask, n_treated_obs);
    let threshold = observed - tie_tolerance(observed);

    let median = {
        let mut v: Vec<f64> = pooled.values().iter().map(|x| direction * x).collect();
        v.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let high: Vec<bool> = pooled
        .values()
        .iter()
        .map(|x| direction * x > median)
        .collect();

    let exhaustive = spec.plan.mode == PlanMode::Exhaustive;
    if exhaustive && (n >= 63 || (1u64 << n) > spec.plan.exhaustive_cap) {
        return Err(Error::PlanTooLarge {
            assignments: format!("2^{n}"),
            cap: spec.plan.exhaustive_cap,
        });
    }
    let tail = TailModel {
        pooled: &pooled,
        stat: spec.stat,
        direction,
        threshold,
        plan: &spec.plan,
    };

    let rows = spec
        .gammas
        .iter()
        .map(|&gamma| {
            let hi = gamma / (1.0 + gamma);
            let lo = 1.0 / (1.0 + gamma);
            let aligned: Vec<f64> = high.iter().map(|&h| if h { hi } else { lo }).collect();
            let opposed: Vec<f64> = high.iter().map(|&h| if h { lo } else { hi }).collect();
            let a = tail.two_sided(&aligned)?;
            let b = tail.two_sided(&opposed)?;
            Ok(GammaRow {
                gamma,
                p_lower: a.min(b),
                p_upper: a.max(b),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GammaBoundsResult {
        rows,
        statistic_observed,
        direction,
        n,
        exhaustive,
    })
}

struct TailModel<'a> {
    pooled: &'a Pooled,
    stat: StatKind,
    direction: f64,
    threshold: f64,
    plan: &'a PermutationPlan,
}

impl TailModel<'_> {
    fn two_sided(&self, probs: &[f64]) -> Result<f64> {
        let all_control: f64 = probs.iter().map(|p| 1.0 - p).product();
        let all_treated: f64 = probs.iter().product();
        let valid = 1.0 - all_control - all_treated;
        if valid.is_nan() || valid < MIN_VALID_MASS {
            return Err(Error::Degenerate(format!(
                "probability of an assignment with both sides non-empty is {valid:e}"
            )));
        }
        let tail = match self.plan.mode {
            PlanMode::Exhaustive => self.exact_tail(probs),
            PlanMode::MonteCarlo => self.monte_carlo_tail(probs),
        };
        Ok((2.0 * tail).min(1.0))
    }

    fn hit(&self, mask: &[bool], n_treated: usize) -> bool {
        self.pooled
            .directional(self.stat, mask, n_treated, self.direction)
            >= self.threshold
    }

    fn exact_tail(&self, probs: &[f64]) -> f64 {
        let n = probs.len();
        let mut mask = vec![false; n];
        let (mut valid, mut extreme) = (0.0, 0.0);
        for bits in 1..(1u64 << n) - 1 {
            let mut weight = 1.0;
            for (i, (&p, m)) in probs.iter().zip(mask.iter_mut()).enumerate() {
                *m = bits >> i & 1 == 1;
                weight *= if *m { p } else { 1.0 - p };
            }
            valid += weight;
            if self.hit(&mask, bits.count_ones() as usize) {
                extreme += weight;
            }
        }
        extreme / valid
    }

    fn monte_carlo_tail(&self, probs: &[f64]) -> f64 {
        let n = probs.len();
        let streams = DrawStreams::new(self.plan.seed);
        let hits = (0..self.plan.draws)
            .into_par_iter()
            .map_init(
                || vec![false; n],
                |mask, draw| {
                    let mut rng = streams.stream(draw);
                    // redraw until both sides are non-empty
                    let n_treated = loop {
                        let mut count = 0;
                        for (m, &p) in mask.iter_mut().zip(probs) {
                            *m = rng.random::<f64>() < p;
                            count += usize::from(*m);
                        }
                        if count > 0 && count < n {
                            break count;
                        }
                    };
                    self.hit(mask, n_treated)
                },
            )
            .filter(|&h| h)
            .count() as u64;
        (1 + hits) as f64 / (1 + self.plan.draws) as f64
    }
}

/// Long-format surface row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub window: Window,
    pub tau: f64,
    pub p: Option<f64>,
}

pub fn emit_surface_table(surface: &SensitivitySurface) -> Vec<SurfaceRow> {
    surface
        .windows
        .iter()
        .zip(&surface.p)
        .flat_map(|(window, row)| {
            surface.taus.iter().zip(row).map(|(&tau, &p)| SurfaceRow {
                window: *window,
                tau,
                p,
            })
        })
        .collect()
}

pub fn emit_bounds_table(bounds: &GammaBoundsResult) -> Vec<GammaRow> {
    bounds.rows.clone()
}

/// Formats a possibly missing cell, never leaving it blank.
pub fn format_cell(value: Option<f64>) -> String {
    value.map_or_else(|| NA.to_string(), |v| v.to_string())
}

/// Observations inside `window` on each side, without failing on empty sides.
pub fn window_counts(dataset: &Dataset, window: &Window) -> (usize, usize) {
    let split = split_window(dataset, window);
    (split.control.len(), split.treated.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{test_sharp_null, GridSpec, InferenceSpec};

    fn toy() -> Dataset {
        Dataset::from_columns(
            &[-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.5],
            &[1.0, 2.5, 2.0, 3.5, 4.0, 6.0, 5.5, 7.0, 30.0],
        )
        .unwrap()
    }

    #[test]
    fn single_cell_matches_direct_test() {
        let w = Window::symmetric(2.0).unwrap();
        let plan = PermutationPlan::monte_carlo(999, 5);
        let spec = SensitivitySpec {
            plan,
            ..SensitivitySpec::new(vec![w], vec![1.5])
        };
        let s = sensitivity_surface(&toy(), &spec).unwrap();
        let direct = test_sharp_null(
            &toy(),
            &InferenceSpec {
                plan,
                ..InferenceSpec::new(w, GridSpec::new(0.0, 1.0, 1.0).unwrap())
            },
            1.5,
        )
        .unwrap();
        assert_eq!(s.p, vec![vec![Some(direct.p)]]);
    }

    #[test]
    fn empty_window_rows_are_marked() {
        let spec = SensitivitySpec {
            plan: PermutationPlan::exhaustive(),
            ..SensitivitySpec::new(
                vec![
                    Window::new(0.0, 1.0).unwrap(),
                    Window::symmetric(1.0).unwrap(),
                ],
                vec![0.0, 1.0, 2.0],
            )
        };
        let s = sensitivity_surface(&toy(), &spec).unwrap();
        assert_eq!(s.p[0], vec![None, None, None]);
        assert_eq!(s.per_window_ci[0], WindowCi::NotComputed);
        assert!(s.p[1].iter().all(Option::is_some));
        assert_eq!(s.warnings.len(), 1);

        let rows = emit_surface_table(&s);
        assert_eq!(rows.len(), 6);
        assert_eq!(format_cell(rows[0].p), "NA");

        let none = SensitivitySpec {
            windows: vec![Window::new(0.0, 1.0).unwrap()],
            ..spec
        };
        assert!(matches!(
            sensitivity_surface(&toy(), &none),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn surface_spec_validation() {
        let w = vec![Window::symmetric(1.0).unwrap()];
        assert!(SensitivitySpec::new(w.clone(), vec![1.0, 1.0])
            .validate()
            .is_err());
        assert!(SensitivitySpec::new(w.clone(), vec![]).validate().is_err());
        assert!(SensitivitySpec::new(vec![], vec![1.0]).validate().is_err());
        assert!(SensitivitySpec::new(w, vec![0.0, 1.0]).validate().is_ok());
    }

    #[test]
    fn gamma_one_collapses() {
        for plan in [
            PermutationPlan::exhaustive(),
            PermutationPlan::monte_carlo(999, 2),
        ] {
            let spec = GammaBoundsSpec {
                plan,
                gammas: vec![1.0],
                ..GammaBoundsSpec::new(Window::symmetric(2.0).unwrap())
            };
            let r = gamma_bounds(&toy(), &spec).unwrap();
            assert_eq!(r.rows[0].p_lower, r.rows[0].p_upper);
        }
    }

    #[test]
    fn gamma_bounds_are_ordered_and_spread() {
        let spec = GammaBoundsSpec {
            plan: PermutationPlan::exhaustive(),
            gammas: vec![1.0, 1.5, 2.0, 4.0],
            ..GammaBoundsSpec::new(Window::symmetric(3.0).unwrap())
        };
        let r = gamma_bounds(&toy(), &spec).unwrap();
        assert_eq!(r.direction, 1.0);
        for pair in r.rows.windows(2) {
            assert!(pair[1].p_upper >= pair[0].p_upper);
            assert!(pair[1].p_lower <= pair[0].p_lower);
        }
        assert!(r.rows.iter().all(|row| row.p_lower <= row.p_upper));
        assert!(r.rows[3].p_upper > r.rows[3].p_lower);
        assert_eq!(emit_bounds_table(&r).len(), 4);
    }

    #[test]
    fn gamma_validation_and_degeneracy() {
        let w = Window::symmetric(2.0).unwrap();
        for gammas in [vec![], vec![0.5], vec![2.0, 1.0], vec![f64::INFINITY]] {
            let spec = GammaBoundsSpec {
                gammas,
                ..GammaBoundsSpec::new(w)
            };
            assert!(spec.validate().is_err());
        }
        let spec = GammaBoundsSpec {
            plan: PermutationPlan::exhaustive(),
            gammas: vec![1e12],
            ..GammaBoundsSpec::new(w)
        };
        // tied outcomes put every unit in one probability class
        let flat = Dataset::from_columns(&[-1.0, -0.5, 0.0, 0.5], &[3.0; 4]).unwrap();
        assert!(matches!(
            gamma_bounds(&flat, &spec),
            Err(Error::Degenerate(_))
        ));
        let big = GammaBoundsSpec {
            plan: PermutationPlan {
                exhaustive_cap: 16,
                ..PermutationPlan::exhaustive()
            },
            ..GammaBoundsSpec::new(w)
        };
        assert!(matches!(
            gamma_bounds(&toy(), &big),
            Err(Error::PlanTooLarge { .. })
        ));
    }
}
