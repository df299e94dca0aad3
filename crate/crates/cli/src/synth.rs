//! Synthetic state-year panel shaped like the replication data.

use std::collections::BTreeMap;
use std::path::Path;

use locrand_core::data::{write_panel_csv, GINI};
use locrand_core::rng::derive_seed;
use locrand_core::{Error, PanelRecord, PanelSchema, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// The 26 states and the Federal District.
pub const UNITS: [&str; 27] = [
    "AC", "AL", "AP", "AM", "BA", "CE", "DF", "ES", "GO", "MA", "MT", "MS", "MG", "PA", "PB", "PR",
    "PE", "PI", "RJ", "RN", "RS", "RO", "RR", "SC", "SP", "SE", "TO",
];

/// Piecewise-linear outcome in the margin `m = year - cutoff_year`:
/// `level + spread * z_unit + pre_slope * m` before the cutoff and
/// `level + spread * z_unit + jump + post_slope * m` from it on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub level: f64,
    pub spread: f64,
    pub pre_slope: f64,
    pub post_slope: f64,
    pub jump: f64,
    pub noise: f64,
    /// Decimal places kept in the written file.
    pub decimals: i32,
}

impl OutcomeModel {
    fn trend(&self, unit_score: f64, margin: f64) -> f64 {
        let base = self.level + self.spread * unit_score;
        if margin < 0.0 {
            base + self.pre_slope * margin
        } else {
            base + self.jump + self.post_slope * margin
        }
    }
}

/// Covariate that is flat within `stable_margin` of the cutoff and drifts
/// linearly (as a fraction of the unit level per year) beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateModel {
    pub level: f64,
    pub spread: f64,
    pub stable_margin: f64,
    pub pre_drift: f64,
    pub post_drift: f64,
    pub noise: f64,
}

impl CovariateModel {
    fn trend(&self, unit_score: f64, margin: f64) -> f64 {
        let base = self.level + self.spread * unit_score;
        let factor = if margin < -self.stable_margin {
            1.0 - self.pre_drift * (-self.stable_margin - margin)
        } else if margin > self.stable_margin {
            1.0 + self.post_drift * (margin - self.stable_margin)
        } else {
            1.0
        };
        base * factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_units: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub cutoff_year: i32,
    pub gini: OutcomeModel,
    pub male_income: OutcomeModel,
    pub female_income: OutcomeModel,
    pub pbf: CovariateModel,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_units: 27,
            first_year: 2004,
            last_year: 2015,
            cutoff_year: 2011,
            gini: OutcomeModel {
                level: 0.52,
                spread: 0.03,
                pre_slope: -0.012,
                post_slope: -0.003,
                jump: -0.008,
                noise: 0.004,
                decimals: 4,
            },
            male_income: OutcomeModel {
                level: 1900.0,
                spread: 800.0,
                pre_slope: 130.0,
                post_slope: 70.0,
                jump: -150.0,
                noise: 40.0,
                decimals: 2,
            },
            female_income: OutcomeModel {
                level: 1400.0,
                spread: 220.0,
                pre_slope: 120.0,
                post_slope: 60.0,
                jump: -95.0,
                noise: 30.0,
                decimals: 2,
            },
            pbf: CovariateModel {
                level: 500_000.0,
                spread: 180_000.0,
                stable_margin: 3.0,
                pre_drift: 0.2,
                post_drift: 0.35,
                noise: 2_000.0,
            },
            seed: 20_110_101,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidSpec(
                "synth.n_units must be at least 1".into(),
            ));
        }
        if self.first_year > self.last_year {
            return Err(Error::InvalidSpec(format!(
                "synth years {}..={} are empty",
                self.first_year, self.last_year
            )));
        }
        let noises = [
            (GINI, self.gini.noise),
            ("male_income", self.male_income.noise),
            ("female_income", self.female_income.noise),
            ("pbf", self.pbf.noise),
        ];
        for (name, noise) in noises {
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "synth.{name}.noise must be finite and >= 0, got {noise}"
                )));
            }
        }
        Ok(())
    }

    pub fn unit_ids(&self) -> Vec<String> {
        if self.n_units == UNITS.len() {
            UNITS.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_units).map(|i| format!("U{i:03}")).collect()
        }
    }
}

/// Evenly spaced unit scores with mean 0 and variance 1, in seeded order.
fn unit_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut scores: Vec<f64> = (0..n)
        .map(|u| {
            if n == 1 {
                0.0
            } else {
                (2.0 * (u as f64 + 0.5) / n as f64 - 1.0) * 3f64.sqrt()
            }
        })
        .collect();
    scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    scores
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (value * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Builds the panel in unit-major, year-ascending order.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<PanelRecord>> {
    spec.validate()?;
    let outcomes = [
        (GINI, &spec.gini),
        ("male_income", &spec.male_income),
        ("female_income", &spec.female_income),
    ];
    let n = spec.n_units;
    let years: Vec<i32> = (spec.first_year..=spec.last_year).collect();
    let mut records: Vec<PanelRecord> = spec
        .unit_ids()
        .into_iter()
        .flat_map(|unit_id| {
            years.iter().map(move |&year| PanelRecord {
                unit_id: unit_id.clone(),
                year,
                outcome_values: BTreeMap::new(),
                covariate_values: BTreeMap::new(),
            })
        })
        .collect();

    let total = records.len();
    let noise_draws = |tag: u64, sd: f64| -> Vec<f64> {
        if sd == 0.0 {
            return vec![0.0; total];
        }
        let normal = Normal::new(0.0, sd).expect("sd is finite and non-negative");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[tag, 1]));
        (0..total).map(|_| normal.sample(&mut rng)).collect()
    };

    for (tag, (name, model)) in outcomes.iter().enumerate() {
        let scores = unit_scores(n, derive_seed(spec.seed, &[tag as u64, 0]));
        let noise = noise_draws(tag as u64, model.noise);
        for (i, record) in records.iter_mut().enumerate() {
            let margin = f64::from(record.year - spec.cutoff_year);
            let mut value = model.trend(scores[i / years.len()], margin) + noise[i];
            if *name == GINI {
                value = value.clamp(0.0, 1.0);
            }
            record
                .outcome_values
                .insert(name.to_string(), round_to(value, model.decimals));
        }
    }

    let tag = outcomes.len() as u64;
    let scores = unit_scores(n, derive_seed(spec.seed, &[tag, 0]));
    let noise = noise_draws(tag, spec.pbf.noise);
    for (i, record) in records.iter_mut().enumerate() {
        let margin = f64::from(record.year - spec.cutoff_year);
        let value = spec.pbf.trend(scores[i / years.len()], margin) + noise[i];
        record
            .covariate_values
            .insert("pbf".into(), value.max(0.0).round());
    }
    Ok(records)
}

/// Writes the synthetic panel as CSV with the default column names.
pub fn generate_synthetic(spec: &SynthSpec, out_path: &Path) -> Result<Vec<PanelRecord>> {
    let records = synthesize(spec)?;
    let io = |source| Error::Io {
        path: out_path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(out_path).map_err(io)?;
    let mut writer = std::io::BufWriter::new(file);
    write_panel_csv(&records, &PanelSchema::default(), &mut writer)?;
    std::io::Write::flush(&mut writer).map_err(io)?;
    Ok(records)
}
