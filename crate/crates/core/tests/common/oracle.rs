//! Brute-force reference computations, written without reusing any of the
//! library's statistic or enumeration code.

#![allow(dead_code)]

use locrand_core::StatKind;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Midrank of `x` within `pooled`: #below + (#equal + 1) / 2.
pub fn midrank(x: f64, pooled: &[f64]) -> f64 {
    let below = pooled.iter().filter(|&&v| v < x).count() as f64;
    let equal = pooled.iter().filter(|&&v| v == x).count() as f64;
    below + (equal + 1.0) / 2.0
}

fn ecdf(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64
}

/// (sup(F_control - F_treated), sup(F_treated - F_control)) over pooled points.
pub fn ks_gaps(treated: &[f64], control: &[f64]) -> (f64, f64) {
    let mut up = 0.0f64;
    let mut down = 0.0f64;
    for &x in treated.iter().chain(control) {
        let gap = ecdf(control, x) - ecdf(treated, x);
        up = up.max(gap);
        down = down.max(-gap);
    }
    (up, down)
}

pub fn raw_stat(kind: StatKind, treated: &[f64], control: &[f64]) -> f64 {
    let pooled: Vec<f64> = treated.iter().chain(control).copied().collect();
    match kind {
        StatKind::DiffMeans => mean(treated) - mean(control),
        StatKind::RankSum => treated.iter().map(|&x| midrank(x, &pooled)).sum(),
        StatKind::KolmogorovSmirnov => {
            let (a, b) = ks_gaps(treated, control);
            a.max(b)
        }
    }
}

/// Signed statistic oriented so that positive means treated above control.
pub fn signed_stat(kind: StatKind, treated: &[f64], control: &[f64], direction: f64) -> f64 {
    let n = (treated.len() + control.len()) as f64;
    match kind {
        StatKind::DiffMeans => direction * raw_stat(kind, treated, control),
        StatKind::RankSum => {
            direction * (raw_stat(kind, treated, control) - treated.len() as f64 * (n + 1.0) / 2.0)
        }
        StatKind::KolmogorovSmirnov => {
            let (up, down) = ks_gaps(treated, control);
            if direction >= 0.0 {
                up
            } else {
                down
            }
        }
    }
}

pub fn two_sided(kind: StatKind, treated: &[f64], control: &[f64]) -> f64 {
    match kind {
        StatKind::KolmogorovSmirnov => raw_stat(kind, treated, control),
        _ => signed_stat(kind, treated, control, 1.0).abs(),
    }
}

fn split(values: &[f64], bits: u64) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if bits >> i & 1 == 1 {
            t.push(v);
        } else {
            c.push(v);
        }
    }
    (t, c)
}

/// Exact fixed-margins two-sided p-value by scanning every bitmask.
pub fn exact_p(kind: StatKind, treated: &[f64], control: &[f64]) -> f64 {
    let values: Vec<f64> = treated.iter().chain(control).copied().collect();
    let n = values.len();
    assert!(n <= 24);
    let observed = two_sided(kind, treated, control);
    let tol = 1e-12 * observed.abs().max(1.0);
    let (mut total, mut extreme) = (0u64, 0u64);
    for bits in 0u64..(1 << n) {
        if bits.count_ones() as usize != treated.len() {
            continue;
        }
        let (t, c) = split(&values, bits);
        total += 1;
        if two_sided(kind, &t, &c) >= observed - tol {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Bernoulli assignment p-value bound for one probability pattern by direct
/// weighting over all assignments with both sides non-empty.
pub fn bernoulli_pattern_p(
    kind: StatKind,
    treated: &[f64],
    control: &[f64],
    probs: &[f64],
    direction: f64,
) -> f64 {
    let values: Vec<f64> = treated.iter().chain(control).copied().collect();
    let n = values.len();
    let observed = signed_stat(kind, treated, control, direction);
    let tol = 1e-12 * observed.abs().max(1.0);
    let (mut valid, mut extreme) = (0.0, 0.0);
    for bits in 1u64..(1 << n) - 1 {
        let w: f64 = (0..n)
            .map(|i| {
                if bits >> i & 1 == 1 {
                    probs[i]
                } else {
                    1.0 - probs[i]
                }
            })
            .product();
        let (t, c) = split(&values, bits);
        valid += w;
        if signed_stat(kind, &t, &c, direction) >= observed - tol {
            extreme += w;
        }
    }
    (2.0 * extreme / valid).min(1.0)
}

/// (p_lower, p_upper) for the outcome-ordered gamma model, from scratch.
pub fn gamma_bounds_oracle(
    kind: StatKind,
    treated: &[f64],
    control: &[f64],
    gamma: f64,
) -> (f64, f64) {
    let values: Vec<f64> = treated.iter().chain(control).copied().collect();
    let direction = match kind {
        StatKind::KolmogorovSmirnov => {
            let (up, down) = ks_gaps(treated, control);
            if up - down < 0.0 {
                -1.0
            } else {
                1.0
            }
        }
        _ => {
            if signed_stat(kind, treated, control, 1.0) < 0.0 {
                -1.0
            } else {
                1.0
            }
        }
    };
    let mut oriented: Vec<f64> = values.iter().map(|v| direction * v).collect();
    oriented.sort_by(f64::total_cmp);
    let n = oriented.len();
    let median = if n % 2 == 1 {
        oriented[n / 2]
    } else {
        (oriented[n / 2 - 1] + oriented[n / 2]) / 2.0
    };
    let hi = gamma / (1.0 + gamma);
    let lo = 1.0 / (1.0 + gamma);
    let aligned: Vec<f64> = values
        .iter()
        .map(|v| if direction * v > median { hi } else { lo })
        .collect();
    let opposed: Vec<f64> = values
        .iter()
        .map(|v| if direction * v > median { lo } else { hi })
        .collect();
    let a = bernoulli_pattern_p(kind, treated, control, &aligned, direction);
    let b = bernoulli_pattern_p(kind, treated, control, &opposed, direction);
    (a.min(b), a.max(b))
}
