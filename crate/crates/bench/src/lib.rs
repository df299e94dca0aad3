//! Shared inputs for the benchmarks.

use locrand_core::Dataset;

/// Deterministic two-sided sample of `n` values per side with a small shift.
pub fn sample(n: usize, shift: f64) -> (Vec<f64>, Vec<f64>) {
    let value = |i: usize| ((i * 7919) % 1000) as f64 / 100.0;
    let treated = (0..n).map(|i| value(i) + shift).collect();
    let control = (0..n).map(|i| value(i + n)).collect();
    (treated, control)
}

/// Panel-like dataset: `per_margin` observations at each integer margin in
/// `-7..=4`, with a covariate that drifts beyond three years from the cutoff.
pub fn panel(per_margin: usize) -> Dataset {
    let mut running = Vec::new();
    let mut outcome = Vec::new();
    let mut covariate = Vec::new();
    for m in -7..=4 {
        for i in 0..per_margin {
            let m = f64::from(m);
            running.push(m);
            outcome.push(i as f64 + if m >= 0.0 { 2.0 } else { 0.0 });
            let drift = if m.abs() > 3.0 { m * 5.0 } else { 0.0 };
            covariate.push(((i * 37) % per_margin) as f64 + drift);
        }
    }
    Dataset::from_columns_with_covariate(&running, &outcome, Some(&covariate))
        .expect("columns have equal length")
}
