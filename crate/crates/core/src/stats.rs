//! Two-sample statistics and their randomization distributions.
//!
//! All tests here are fixed-margins: the number of treated units is held at
//! its observed value and treatment labels are reassigned over the pooled
//! sample, either by walking every assignment or by Monte Carlo sampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::rng::DrawStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    DiffMeans,
    RankSum,
    KolmogorovSmirnov,
}

impl StatKind {
    pub const ALL: [StatKind; 3] = [
        StatKind::DiffMeans,
        StatKind::RankSum,
        StatKind::KolmogorovSmirnov,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StatKind::DiffMeans => "diff_means",
            StatKind::RankSum => "rank_sum",
            StatKind::KolmogorovSmirnov => "kolmogorov_smirnov",
        }
    }
}

impl std::fmt::Display for StatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown statistic `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Exhaustive,
    MonteCarlo,
}

/// How the randomization distribution is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationPlan {
    pub mode: PlanMode,
    /// Monte Carlo draws; ignored in exhaustive mode.
    pub draws: u64,
    pub seed: u64,
    /// Largest number of assignments exhaustive mode may enumerate.
    pub exhaustive_cap: u64,
}

impl Default for PermutationPlan {
    fn default() -> Self {
        Self {
            mode: PlanMode::MonteCarlo,
            draws: 9999,
            seed: 0,
            exhaustive_cap: 100_000,
        }
    }
}

impl PermutationPlan {
    pub fn exhaustive() -> Self {
        Self {
            mode: PlanMode::Exhaustive,
            ..Self::default()
        }
    }

    pub fn monte_carlo(draws: u64, seed: u64) -> Self {
        Self {
            mode: PlanMode::MonteCarlo,
            draws,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == PlanMode::MonteCarlo && self.draws == 0 {
            return Err(Error::InvalidSpec(
                "Monte Carlo draws must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueResult {
    pub p: f64,
    /// The statistic as returned by [`compute_stat`] on the observed split.
    pub statistic_observed: f64,
    /// Assignments enumerated (exhaustive) or Monte Carlo draws taken.
    pub n_draws_effective: u64,
    pub exhaustive: bool,
    /// Assignments (or draws) at least as extreme as the observed one.
    pub n_extreme: u64,
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// The statistic on an explicit split.
///
/// `DiffMeans` is `mean(treated) - mean(control)`, `RankSum` the sum of
/// pooled midranks of the treated values and `KolmogorovSmirnov` the largest
/// gap between the two empirical distribution functions.
pub fn compute_stat(kind: StatKind, treated: &[f64], control: &[f64]) -> Result<f64> {
    let (pooled, mask) = Pooled::new(treated, control)?;
    Ok(pooled.raw(kind, &mask, treated.len()))
}

/// Two-sided fixed-margins randomization p-value.
pub fn permutation_pvalue(
    kind: StatKind,
    treated: &[f64],
    control: &[f64],
    plan: &PermutationPlan,
) -> Result<PValueResult> {
    plan.validate()?;
    let (pooled, observed_mask) = Pooled::new(treated, control)?;
    let n = pooled.len();
    let n_treated = treated.len();
    let observed = pooled.magnitude(kind, &observed_mask, n_treated);
    let statistic_observed = pooled.raw(kind, &observed_mask, n_treated);
    let threshold = observed - tie_tolerance(observed);

    match plan.mode {
        PlanMode::Exhaustive => {
            let total = binomial(n as u64, n_treated as u64)
                .filter(|&c| c <= u128::from(plan.exhaustive_cap))
                .ok_or_else(|| Error::PlanTooLarge {
                    assignments: binomial(n as u64, n_treated as u64)
                        .map(|c| c.to_string())
                        .unwrap_or_else(|| format!("C({n}, {n_treated})")),
                    cap: plan.exhaustive_cap,
                })? as u64;
            let mut mask = vec![false; n];
            let mut n_extreme = 0u64;
            for_each_combination(n, n_treated, |chosen| {
                mask.fill(false);
                for &i in chosen {
                    mask[i] = true;
                }
                if pooled.magnitude(kind, &mask, n_treated) >= threshold {
                    n_extreme += 1;
                }
            });
            Ok(PValueResult {
                p: n_extreme as f64 / total as f64,
                statistic_observed,
                n_draws_effective: total,
                exhaustive: true,
                n_extreme,
            })
        }
        PlanMode::MonteCarlo => {
            let streams = DrawStreams::new(plan.seed);
            let n_extreme = (0..plan.draws)
                .into_par_iter()
                .map_init(
                    || Resampler::new(n, n_treated),
                    |resampler, draw| {
                        let mut rng = streams.stream(draw);
                        resampler.draw(&mut rng);
                        resampler.magnitude(&pooled, kind) >= threshold
                    },
                )
                .filter(|&hit| hit)
                .count() as u64;
            Ok(PValueResult {
                p: (1 + n_extreme) as f64 / (1 + plan.draws) as f64,
                statistic_observed,
                n_draws_effective: plan.draws,
                exhaustive: false,
                n_extreme,
            })
        }
    }
}

/// Reusable scratch space for drawing a random fixed-margins assignment.
///
/// A partial Fisher-Yates shuffle picks whichever side is smaller; the drawn
/// indices are kept and the mask is only filled when a statistic needs it.
struct Resampler {
    index: Vec<usize>,
    mask: Vec<bool>,
    n_treated: usize,
    picks: usize,
    picks_treated: bool,
}

impl Resampler {
    fn new(n: usize, n_treated: usize) -> Self {
        let picks_treated = n_treated <= n - n_treated;
        Self {
            index: (0..n).collect(),
            mask: vec![false; n],
            n_treated,
            picks: if picks_treated {
                n_treated
            } else {
                n - n_treated
            },
            picks_treated,
        }
    }

    fn draw<R: Rng>(&mut self, rng: &mut R) {
        let n = self.index.len();
        for (i, slot) in self.index.iter_mut().enumerate() {
            *slot = i;
        }
        for i in 0..self.picks {
            let j = i + rng.random_range(0..(n - i) as u32) as usize;
            self.index.swap(i, j);
        }
    }

    fn picked(&self) -> &[usize] {
        &self.index[..self.picks]
    }

    /// Sum of `values` over the drawn treated set.
    fn treated_sum(&self, values: &[f64], total: f64) -> f64 {
        let s: f64 = self.picked().iter().map(|&i| values[i]).sum();
        if self.picks_treated {
            s
        } else {
            total - s
        }
    }

    fn fill_mask(&mut self) {
        self.mask.fill(!self.picks_treated);
        for &i in &self.index[..self.picks] {
            self.mask[i] = self.picks_treated;
        }
    }

    fn magnitude(&mut self, pooled: &Pooled, kind: StatKind) -> f64 {
        let n = pooled.len();
        let nt = self.n_treated;
        match kind {
            StatKind::DiffMeans => {
                let t = self.treated_sum(&pooled.values, pooled.total);
                (t / nt as f64 - (pooled.total - t) / (n - nt) as f64).abs()
            }
            StatKind::RankSum => {
                let rank_total = (n * (n + 1)) as f64 / 2.0;
                let t = self.treated_sum(&pooled.midranks, rank_total);
                (t - nt as f64 * (n + 1) as f64 / 2.0).abs()
            }
            StatKind::KolmogorovSmirnov => {
                self.fill_mask();
                pooled.magnitude(kind, &self.mask, nt)
            }
        }
    }
}

/// Slack for declaring a resampled statistic "as extreme" as the observed one.
pub(crate) fn tie_tolerance(observed: f64) -> f64 {
    1e-12 * observed.abs().max(1.0)
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost index that can still advance
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Pooled sample with the rank and order information every statistic needs.
#[derive(Debug, Clone)]
pub(crate) struct Pooled {
    values: Vec<f64>,
    midranks: Vec<f64>,
    /// Indices sorted by value.
    order: Vec<usize>,
    /// Exclusive end (in `order`) of each run of tied values.
    tie_ends: Vec<usize>,
    total: f64,
}

impl Pooled {
    /// Treated values come first; the returned mask marks them.
    pub(crate) fn new(treated: &[f64], control: &[f64]) -> Result<(Self, Vec<bool>)> {
        if treated.is_empty() {
            return Err(Error::EmptySide(Side::Treated));
        }
        if control.is_empty() {
            return Err(Error::EmptySide(Side::Control));
        }
        let values: Vec<f64> = treated.iter().chain(control).copied().collect();
        let mask: Vec<bool> = (0..values.len()).map(|i| i < treated.len()).collect();
        Ok((Self::from_values(values)?, mask))
    }

    pub(crate) fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("statistics need finite values".into()));
        }
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

        let mut midranks = vec![0.0; n];
        let mut tie_ends = Vec::new();
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && values[order[end]] == values[order[start]] {
                end += 1;
            }
            // ranks start..end (0-based) share the average 1-based rank
            let rank = (start + end + 1) as f64 / 2.0;
            for &i in &order[start..end] {
                midranks[i] = rank;
            }
            tie_ends.push(end);
            start = end;
        }
        let total = values.iter().sum();
        Ok(Self {
            values,
            midranks,
            order,
            tie_ends,
            total,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    fn diff_means(&self, mask: &[bool], n_treated: usize) -> f64 {
        let n_control = self.len() - n_treated;
        let treated_sum: f64 = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, &t)| t)
            .map(|(v, _)| v)
            .sum();
        treated_sum / n_treated as f64 - (self.total - treated_sum) / n_control as f64
    }

    fn rank_sum(&self, mask: &[bool]) -> f64 {
        self.midranks
            .iter()
            .zip(mask)
            .filter(|(_, &t)| t)
            .map(|(r, _)| r)
            .sum()
    }

    fn rank_sum_centered(&self, mask: &[bool], n_treated: usize) -> f64 {
        self.rank_sum(mask) - n_treated as f64 * (self.len() + 1) as f64 / 2.0
    }

    /// `(sup(F_control - F_treated), sup(F_treated - F_control))` over pooled points.
    fn ks_gaps(&self, mask: &[bool], n_treated: usize) -> (f64, f64) {
        let n_control = self.len() - n_treated;
        let (mut ct, mut cc) = (0usize, 0usize);
        let (mut up, mut down) = (0.0f64, 0.0f64);
        let mut start = 0;
        for &end in &self.tie_ends {
            for &i in &self.order[start..end] {
                if mask[i] {
                    ct += 1;
                } else {
                    cc += 1;
                }
            }
            let gap = cc as f64 / n_control as f64 - ct as f64 / n_treated as f64;
            up = up.max(gap);
            down = down.max(-gap);
            start = end;
        }
        (up, down)
    }

    /// The statistic exactly as [`compute_stat`] reports it.
    pub(crate) fn raw(&self, kind: StatKind, mask: &[bool], n_treated: usize) -> f64 {
        match kind {
            StatKind::DiffMeans => self.diff_means(mask, n_treated),
            StatKind::RankSum => self.rank_sum(mask),
            StatKind::KolmogorovSmirnov => {
                let (up, down) = self.ks_gaps(mask, n_treated);
                up.max(down)
            }
        }
    }

    /// Two-sided magnitude; the rank sum is centered at its null mean first.
    pub(crate) fn magnitude(&self, kind: StatKind, mask: &[bool], n_treated: usize) -> f64 {
        match kind {
            StatKind::DiffMeans => self.diff_means(mask, n_treated).abs(),
            StatKind::RankSum => self.rank_sum_centered(mask, n_treated).abs(),
            StatKind::KolmogorovSmirnov => self.raw(kind, mask, n_treated),
        }
    }

    /// One-sided version of the statistic, large when treated values sit
    /// above control values (`direction = 1`) or below them (`direction = -1`).
    pub(crate) fn directional(
        &self,
        kind: StatKind,
        mask: &[bool],
        n_treated: usize,
        direction: f64,
    ) -> f64 {
        match kind {
            StatKind::DiffMeans => direction * self.diff_means(mask, n_treated),
            StatKind::RankSum => direction * self.rank_sum_centered(mask, n_treated),
            StatKind::KolmogorovSmirnov => {
                let (up, down) = self.ks_gaps(mask, n_treated);
                if direction >= 0.0 {
                    up
                } else {
                    down
                }
            }
        }
    }

    /// Direction in which the observed split departs from the null.
    pub(crate) fn observed_direction(
        &self,
        kind: StatKind,
        mask: &[bool],
        n_treated: usize,
    ) -> f64 {
        let signed = match kind {
            StatKind::DiffMeans => self.diff_means(mask, n_treated),
            StatKind::RankSum => self.rank_sum_centered(mask, n_treated),
            StatKind::KolmogorovSmirnov => {
                let (up, down) = self.ks_gaps(mask, n_treated);
                up - down
            }
        };
        if signed < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}
