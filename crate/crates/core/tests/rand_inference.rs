mod common;

use common::oracle;
use locrand_core::inference::{
    adjust_outcomes, confidence_interval, point_estimate, test_sharp_null, CiStatus,
};
use locrand_core::stats::permutation_pvalue;
use locrand_core::{Dataset, GridSpec, InferenceSpec, PermutationPlan, StatKind, Window};
use proptest::prelude::*;

fn two_sample(control: &[f64], treated: &[f64]) -> Dataset {
    let mut running = Vec::new();
    let mut outcome = Vec::new();
    for (i, &y) in control.iter().enumerate() {
        running.push(-1.0 - i as f64 * 0.25);
        outcome.push(y);
    }
    for (i, &y) in treated.iter().enumerate() {
        running.push(i as f64 * 0.25);
        outcome.push(y);
    }
    Dataset::from_columns(&running, &outcome).unwrap()
}

fn wide() -> Window {
    Window::symmetric(10.0).unwrap()
}

fn exhaustive_spec(grid: GridSpec) -> InferenceSpec {
    InferenceSpec {
        plan: PermutationPlan::exhaustive(),
        ..InferenceSpec::new(wide(), grid)
    }
}

fn integer_sample(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((0i32..20).prop_map(f64::from), len)
}

#[test]
fn shifted_duplicate_interval_contains_shift() {
    let ds = two_sample(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]);
    let spec = exhaustive_spec(GridSpec::new(-1.0, 5.0, 0.1).unwrap());
    let r = confidence_interval(&ds, &spec).unwrap();
    assert_eq!(r.status, CiStatus::Ok);
    assert!(r.ci_low.unwrap() <= 2.0 && 2.0 <= r.ci_high.unwrap());
    assert_eq!(test_sharp_null(&ds, &spec, 2.0).unwrap().p, 1.0);
    assert_eq!(r.point_estimate, 2.0);
}

#[test]
fn grid_p_values_match_exhaustive_inversion_oracle() {
    let control = [1.0, 2.0, 3.0];
    let treated = [3.0, 4.0, 5.0];
    let ds = two_sample(&control, &treated);
    let spec = exhaustive_spec(GridSpec::new(-1.0, 5.0, 0.1).unwrap());
    let r = confidence_interval(&ds, &spec).unwrap();
    for g in &r.grid {
        let shifted: Vec<f64> = treated.iter().map(|y| y - g.tau).collect();
        let want = oracle::exact_p(StatKind::DiffMeans, &shifted, &control);
        assert_eq!(g.p, want, "tau {}", g.tau);
    }
}

#[test]
fn poly_order_one_removes_exact_line() {
    let ds = Dataset::from_columns(
        &[-3.0, -2.0, -1.0, 0.0, 1.0, 2.0],
        &[1.0, 3.0, 5.0, 10.0, 10.5, 11.0],
    )
    .unwrap();
    let obs = ds.observations();
    let control: Vec<_> = obs.iter().filter(|o| o.running < 0.0).collect();
    let treated: Vec<_> = obs.iter().filter(|o| o.running >= 0.0).collect();
    let (c, t) = adjust_outcomes(&control, &treated, 0.0, 1).unwrap();
    for v in c {
        assert!((v - 3.0).abs() < 1e-12);
    }
    for v in t {
        assert!((v - 10.5).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn location_equivariance(c in integer_sample(4), t in integer_sample(4), shift in -5i32..5) {
        let shift = f64::from(shift);
        let moved: Vec<f64> = t.iter().map(|y| y + shift).collect();
        let base = two_sample(&c, &t);
        let other = two_sample(&c, &moved);
        let e0 = point_estimate(&base, &wide()).unwrap();
        let e1 = point_estimate(&other, &wide()).unwrap();
        prop_assert!((e1 - e0 - shift).abs() < 1e-9);

        // integer shifts keep the grids aligned
        let g0 = GridSpec::new(-40.0, 40.0, 0.5).unwrap();
        let g1 = GridSpec::new(-40.0 + shift, 40.0 + shift, 0.5).unwrap();
        let r0 = confidence_interval(&base, &exhaustive_spec(g0)).unwrap();
        let r1 = confidence_interval(&other, &exhaustive_spec(g1)).unwrap();
        prop_assert_eq!(r0.grid.len(), r1.grid.len());
        for (a, b) in r0.grid.iter().zip(&r1.grid) {
            prop_assert!((b.tau - a.tau - shift).abs() < 1e-9);
            prop_assert_eq!(a.p, b.p);
        }
        match (r0.ci_low, r1.ci_low) {
            (Some(a), Some(b)) => prop_assert!((b - a - shift).abs() < 1e-9),
            (None, None) => {}
            _ => prop_assert!(false, "acceptance differs"),
        }
    }

    #[test]
    fn duality_and_nesting(c in integer_sample(5), t in integer_sample(4), seed in any::<u64>()) {
        let ds = two_sample(&c, &t);
        let grid = GridSpec::new(-25.0, 25.0, 0.5).unwrap();
        let base = InferenceSpec {
            plan: PermutationPlan::monte_carlo(199, seed),
            ..InferenceSpec::new(wide(), grid)
        };
        let loose = confidence_interval(&ds, &InferenceSpec { alpha: 0.05, ..base }).unwrap();
        let strict = confidence_interval(&ds, &InferenceSpec { alpha: 0.3, ..base }).unwrap();
        for (r, alpha) in [(&loose, 0.05), (&strict, 0.3)] {
            for g in &r.grid {
                let direct = test_sharp_null(&ds, &InferenceSpec { alpha, ..base }, g.tau).unwrap().p;
                prop_assert_eq!(g.p, direct);
                if r.accepted_taus_contiguous {
                    let inside = r.ci_low.is_some_and(|lo| lo <= g.tau)
                        && r.ci_high.is_some_and(|hi| g.tau <= hi);
                    prop_assert_eq!(inside, g.p > alpha, "tau {}", g.tau);
                }
            }
        }
        for (a, b) in loose.grid.iter().zip(&strict.grid) {
            prop_assert!(b.p <= 0.3 || a.p > 0.05);
        }
    }

    #[test]
    fn poly_zero_matches_stats_engine(c in integer_sample(5), t in integer_sample(5), seed in any::<u64>()) {
        let ds = two_sample(&c, &t);
        for kind in StatKind::ALL {
            let plan = PermutationPlan::monte_carlo(99, seed);
            let spec = InferenceSpec {
                stat: kind,
                plan,
                ..InferenceSpec::new(wide(), GridSpec::new(-1.0, 1.0, 1.0).unwrap())
            };
            let a = test_sharp_null(&ds, &spec, 0.0).unwrap();
            let b = permutation_pvalue(kind, &t, &c, &plan).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
