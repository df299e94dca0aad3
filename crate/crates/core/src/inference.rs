//! Sharp-null randomization inference inside one window: point estimates,
//! tests of a constant treatment effect, and confidence sets by inversion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subset_window, Dataset, Observation, Window};
use crate::error::{Error, Result, Side};
use crate::stats::{permutation_pvalue, PValueResult, PermutationPlan, StatKind};

/// Evenly spaced grid of hypothesized effects, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub const MAX_POINTS: f64 = 1e6;

    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let grid = Self { lo, hi, step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidSpec("tau grid must be finite".into()));
        }
        if self.lo >= self.hi || self.step <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "tau grid needs lo < hi and step > 0, got lo={} hi={} step={}",
                self.lo, self.hi, self.step
            )));
        }
        if (self.hi - self.lo) / self.step > Self::MAX_POINTS {
            return Err(Error::InvalidSpec(
                "tau grid has more than 1e6 steps".into(),
            ));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| snap(self.lo + k as f64 * self.step, self.step))
            .collect()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    /// Same width and step, centered on `center`.
    pub fn recentered(&self, center: f64) -> Self {
        let half = (self.hi - self.lo) / 2.0;
        Self {
            lo: snap(center - half, self.step),
            hi: snap(center + half, self.step),
            step: self.step,
        }
    }
}

/// Rounds away accumulated binary noise well below the grid resolution.
pub(crate) fn snap(x: f64, step: f64) -> f64 {
    let digits = ((-step.log10()).ceil() as i32 + 6).clamp(0, 15);
    let scale = 10f64.powi(digits);
    let y = (x * scale).round() / scale;
    if y == 0.0 {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSpec {
    pub window: Window,
    pub stat: StatKind,
    pub poly_order: usize,
    pub plan: PermutationPlan,
    pub alpha: f64,
    pub tau_grid: GridSpec,
    /// Effect tested for the headline p-value.
    pub null_tau: f64,
}

impl InferenceSpec {
    pub fn new(window: Window, tau_grid: GridSpec) -> Self {
        Self {
            window,
            stat: StatKind::DiffMeans,
            poly_order: 0,
            plan: PermutationPlan::default(),
            alpha: 0.05,
            tau_grid,
            null_tau: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.null_tau.is_finite() {
            return Err(Error::InvalidSpec("null tau must be finite".into()));
        }
        Window::new(self.window.left, self.window.right)?;
        self.tau_grid.validate()?;
        self.plan.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiStatus {
    Ok,
    /// No grid point was accepted; interval bounds are unset.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub point_estimate: f64,
    pub p_value: PValueResult,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub status: CiStatus,
    pub n_control: usize,
    pub n_treated: usize,
    pub accepted_taus_contiguous: bool,
    /// The grid actually evaluated (after any recentering).
    pub tau_grid: GridSpec,
    pub grid: Vec<GridPoint>,
    pub notices: Vec<String>,
}

/// Imputes outcomes under the sharp null that every treated unit's effect is
/// `tau0`, optionally removing a per-side polynomial trend in the running
/// variable.
///
/// With `poly_order >= 1` each side's values become residuals from its own
/// least-squares fit, shifted back up by that side's mean, so the side means
/// are kept and only the within-side trend is removed.
pub fn adjust_outcomes(
    control: &[&Observation],
    treated: &[&Observation],
    tau0: f64,
    poly_order: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let control_y: Vec<f64> = control.iter().map(|o| o.outcome).collect();
    let treated_y: Vec<f64> = treated.iter().map(|o| o.outcome - tau0).collect();
    if poly_order == 0 {
        return Ok((control_y, treated_y));
    }
    let control_r: Vec<f64> = control.iter().map(|o| o.running).collect();
    let treated_r: Vec<f64> = treated.iter().map(|o| o.running).collect();
    Ok((
        residualize(&control_r, &control_y, poly_order, Side::Control)?,
        residualize(&treated_r, &treated_y, poly_order, Side::Treated)?,
    ))
}

fn residualize(running: &[f64], y: &[f64], order: usize, side: Side) -> Result<Vec<f64>> {
    let mut distinct = running.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < order + 1 {
        return Err(Error::RankDeficient {
            side,
            order,
            needed: order + 1,
            found: distinct.len(),
        });
    }

    let n = y.len();
    let mean_r = running.iter().sum::<f64>() / n as f64;
    let scale = running
        .iter()
        .map(|r| (r - mean_r).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let design = DMatrix::from_fn(n, order + 1, |i, j| {
        ((running[i] - mean_r) / scale).powi(j as i32)
    });
    let response = DVector::from_column_slice(y);
    let beta = design
        .clone()
        .svd(true, true)
        .solve(&response, 1e-12)
        .map_err(|e| Error::Degenerate(format!("least-squares fit failed: {e}")))?;
    let fitted = &design * beta;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    Ok(y.iter()
        .zip(fitted.iter())
        .map(|(v, f)| v - f + mean_y)
        .collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Difference in mean outcomes, treated minus control, inside the window.
pub fn point_estimate(dataset: &Dataset, window: &Window) -> Result<f64> {
    let split = subset_window(dataset, window)?;
    Ok(mean(&split.treated_outcomes()) - mean(&split.control_outcomes()))
}

/// Randomization test of the constant-effect null `Y(1) = Y(0) + tau0`.
pub fn test_sharp_null(dataset: &Dataset, spec: &InferenceSpec, tau0: f64) -> Result<PValueResult> {
    sharp_null_pvalue(
        dataset,
        &spec.window,
        spec.stat,
        spec.poly_order,
        &spec.plan,
        tau0,
    )
}

pub(crate) fn sharp_null_pvalue(
    dataset: &Dataset,
    window: &Window,
    stat: StatKind,
    poly_order: usize,
    plan: &PermutationPlan,
    tau0: f64,
) -> Result<PValueResult> {
    let split = subset_window(dataset, window)?;
    let (control, treated) = adjust_outcomes(&split.control, &split.treated, tau0, poly_order)?;
    permutation_pvalue(stat, &treated, &control, plan)
}

/// Confidence set by test inversion over the effect grid.
///
/// Every grid point reuses the plan's seed, so each test sees the same
/// assignment draws and a grid point's p-value equals a direct call to
/// [`test_sharp_null`] with that effect.
pub fn confidence_interval(dataset: &Dataset, spec: &InferenceSpec) -> Result<InferenceResult> {
    spec.validate()?;
    let split = subset_window(dataset, &spec.window)?;
    let (n_control, n_treated) = (split.control.len(), split.treated.len());
    let estimate = point_estimate(dataset, &spec.window)?;

    let mut notices = Vec::new();
    let mut tau_grid = spec.tau_grid;
    if !tau_grid.contains(estimate) {
        tau_grid = tau_grid.recentered(estimate);
        notices.push(format!(
            "point estimate {estimate} outside tau grid [{}, {}]; grid recentered to [{}, {}]",
            spec.tau_grid.lo, spec.tau_grid.hi, tau_grid.lo, tau_grid.hi
        ));
        log::warn!("{}", notices.last().unwrap());
    }

    let grid = tau_grid
        .points()
        .into_par_iter()
        .map(|tau| {
            Ok(GridPoint {
                tau,
                p: test_sharp_null(dataset, spec, tau)?.p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p_value = test_sharp_null(dataset, spec, spec.null_tau)?;

    let accepted: Vec<usize> = grid
        .iter()
        .enumerate()
        .filter(|(_, g)| g.p > spec.alpha)
        .map(|(i, _)| i)
        .collect();
    let (ci_low, ci_high, status, contiguous) = match (accepted.first(), accepted.last()) {
        (Some(&first), Some(&last)) => (
            Some(grid[first].tau),
            Some(grid[last].tau),
            CiStatus::Ok,
            last - first + 1 == accepted.len(),
        ),
        _ => {
            notices.push("no tau on the grid was accepted; interval is empty".into());
            (None, None, CiStatus::Empty, false)
        }
    };

    Ok(InferenceResult {
        point_estimate: estimate,
        p_value,
        ci_low,
        ci_high,
        status,
        n_control,
        n_treated,
        accepted_taus_contiguous: contiguous,
        tau_grid,
        grid,
        notices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::PlanMode;

    fn obs(running: f64, outcome: f64) -> Observation {
        Observation {
            unit_id: String::new(),
            running,
            outcome,
            covariates: Vec::new(),
        }
    }

    fn two_sample(control: &[f64], treated: &[f64]) -> Dataset {
        let mut running = Vec::new();
        let mut outcome = Vec::new();
        for (i, &y) in control.iter().enumerate() {
            running.push(-1.0 - i as f64 * 0.1);
            outcome.push(y);
        }
        for (i, &y) in treated.iter().enumerate() {
            running.push(i as f64 * 0.1);
            outcome.push(y);
        }
        Dataset::from_columns(&running, &outcome).unwrap()
    }

    fn spec(grid: GridSpec) -> InferenceSpec {
        InferenceSpec {
            plan: PermutationPlan::exhaustive(),
            ..InferenceSpec::new(Window::symmetric(5.0).unwrap(), grid)
        }
    }

    #[test]
    fn grid_points_are_clean() {
        let g = GridSpec::new(-1.0, 5.0, 0.1).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 61);
        assert_eq!(pts[30], 2.0);
        assert_eq!(pts[13], 0.3);
        assert_eq!(*pts.last().unwrap(), 5.0);
        assert_eq!(pts[10], 0.0);
        assert!(GridSpec::new(1.0, 1.0, 0.1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0).is_err());
        assert!(GridSpec::new(0.0, 1e7, 1.0).is_err());
    }

    #[test]
    fn adjust_identity_and_shift() {
        let c = [obs(-1.0, 1.0), obs(-2.0, 2.0)];
        let t = [obs(0.0, 5.0), obs(1.0, 7.0)];
        let cr: Vec<&Observation> = c.iter().collect();
        let tr: Vec<&Observation> = t.iter().collect();
        let (ca, ta) = adjust_outcomes(&cr, &tr, 0.0, 0).unwrap();
        assert_eq!((ca, ta), (vec![1.0, 2.0], vec![5.0, 7.0]));
        let (_, ta) = adjust_outcomes(&cr, &tr, 2.0, 0).unwrap();
        assert_eq!(ta, vec![3.0, 5.0]);
    }

    #[test]
    fn linear_side_collapses_to_mean() {
        // y = 3 + 2r exactly on the treated side
        let t = [obs(0.0, 3.0), obs(1.0, 5.0), obs(2.0, 7.0)];
        let c = [obs(-1.0, 1.0), obs(-2.0, 4.0), obs(-3.0, 0.0)];
        let cr: Vec<&Observation> = c.iter().collect();
        let tr: Vec<&Observation> = t.iter().collect();
        let (_, ta) = adjust_outcomes(&cr, &tr, 0.0, 1).unwrap();
        for v in ta {
            assert!((v - 5.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn polynomial_needs_distinct_running_values() {
        let t = [obs(0.0, 3.0), obs(0.0, 5.0)];
        let c = [obs(-1.0, 1.0), obs(-2.0, 4.0)];
        let cr: Vec<&Observation> = c.iter().collect();
        let tr: Vec<&Observation> = t.iter().collect();
        assert!(matches!(
            adjust_outcomes(&cr, &tr, 0.0, 1),
            Err(Error::RankDeficient {
                side: Side::Treated,
                needed: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn point_estimate_examples() {
        let ds = two_sample(&[90.0, 110.0], &[140.0, 160.0]);
        let w = Window::symmetric(5.0).unwrap();
        assert_eq!(point_estimate(&ds, &w).unwrap(), 50.0);
        let ds = two_sample(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]);
        assert_eq!(point_estimate(&ds, &w).unwrap(), 0.5);
        let empty = Window::new(0.0, 1.0).unwrap();
        assert!(matches!(
            point_estimate(&ds, &empty),
            Err(Error::EmptySide(Side::Control))
        ));
    }

    #[test]
    fn sharp_null_examples() {
        let grid = GridSpec::new(-1.0, 5.0, 0.1).unwrap();
        let ds = two_sample(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]);
        assert_eq!(test_sharp_null(&ds, &spec(grid), 2.0).unwrap().p, 1.0);
        let ds = two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_eq!(test_sharp_null(&ds, &spec(grid), 0.0).unwrap().p, 0.1);
    }

    #[test]
    fn shifted_duplicate_interval() {
        let ds = two_sample(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]);
        let grid = GridSpec::new(-1.0, 5.0, 0.1).unwrap();
        let r = confidence_interval(&ds, &spec(grid)).unwrap();
        assert_eq!(r.status, CiStatus::Ok);
        assert!(r.ci_low.unwrap() <= 2.0 && 2.0 <= r.ci_high.unwrap());
        assert_eq!(r.point_estimate, 2.0);
        assert_eq!((r.n_control, r.n_treated), (3, 3));

        // exhaustive p-values are multiples of 1/20, so alpha in [0.95, 1)
        // keeps only p = 1
        let strict = InferenceSpec {
            alpha: 0.96,
            ..spec(grid)
        };
        let r = confidence_interval(&ds, &strict).unwrap();
        assert_eq!((r.ci_low, r.ci_high), (Some(2.0), Some(2.0)));
        assert!(r.accepted_taus_contiguous);
    }

    #[test]
    fn grid_recentered_when_estimate_outside() {
        let ds = two_sample(&[1.0, 2.0, 3.0], &[11.0, 12.0, 13.0]);
        let grid = GridSpec::new(-1.0, 1.0, 0.5).unwrap();
        let r = confidence_interval(&ds, &spec(grid)).unwrap();
        assert_eq!(
            r.tau_grid,
            GridSpec {
                lo: 9.0,
                hi: 11.0,
                step: 0.5
            }
        );
        assert_eq!(r.notices.len(), 1);
    }

    #[test]
    fn empty_acceptance_is_soft() {
        let ds = two_sample(&[1.0, 2.3, 2.9], &[4.1, 5.7, 6.2]);
        let grid = GridSpec::new(2.0, 4.0, 1.0).unwrap();
        let strict = InferenceSpec {
            alpha: 0.99,
            ..spec(grid)
        };
        let r = confidence_interval(&ds, &strict).unwrap();
        assert_eq!(r.status, CiStatus::Empty);
        assert_eq!((r.ci_low, r.ci_high), (None, None));
    }

    #[test]
    fn spec_validation() {
        let grid = GridSpec::new(-1.0, 1.0, 0.5).unwrap();
        let ds = two_sample(&[1.0, 2.0], &[1.0, 2.0]);
        for alpha in [0.0, 1.0, f64::NAN] {
            let s = InferenceSpec {
                alpha,
                ..spec(grid)
            };
            assert!(matches!(
                confidence_interval(&ds, &s),
                Err(Error::InvalidSpec(_))
            ));
        }
        let s = InferenceSpec {
            plan: PermutationPlan {
                mode: PlanMode::MonteCarlo,
                draws: 0,
                ..PermutationPlan::default()
            },
            ..spec(grid)
        };
        assert!(s.validate().is_err());
    }
}
