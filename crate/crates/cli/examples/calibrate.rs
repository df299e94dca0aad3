//! Regenerates the packaged replication panel from the default synthetic
//! settings and checks the calibration targets on it.
//!
//! ```text
//! cargo run --release -p locrand-cli --example calibrate            # verify
//! cargo run --release -p locrand-cli --example calibrate -- --write # rewrite fixture
//! ```

use std::path::Path;
use std::process::ExitCode;

use locrand_cli::pipeline::{analyze, summarize, Stages};
use locrand_cli::{generate_synthetic, RunConfig, SynthSpec};

fn main() -> ExitCode {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let csv = fixtures.join("replication.csv");
    let write = std::env::args().any(|a| a == "--write");

    let scratch =
        std::env::temp_dir().join(format!("locrand-calibrate-{}.csv", std::process::id()));
    generate_synthetic(&SynthSpec::default(), &scratch).expect("write synthetic panel");
    let fresh = std::fs::read(&scratch).expect("read synthetic panel");
    let _ = std::fs::remove_file(&scratch);
    if write {
        std::fs::write(&csv, &fresh).expect("write fixture");
        println!("wrote {}", csv.display());
    } else if std::fs::read(&csv).ok().as_deref() != Some(fresh.as_slice()) {
        eprintln!(
            "{} differs from the default synthetic panel; rerun with --write",
            csv.display()
        );
        return ExitCode::FAILURE;
    }

    let config = RunConfig::load(&fixtures.join("replication.toml")).expect("load config");
    let analysis = analyze(&config, Stages::ALL).expect("analysis");
    let summary = summarize(&config, &analysis);

    let mut ok = true;
    let mut check = |label: &str, pass: bool, detail: String| {
        println!("{} {label}: {detail}", if pass { "ok  " } else { "FAIL" });
        ok &= pass;
    };
    let scan = summary.scan.as_ref().expect("scan ran");
    check(
        "recommended window",
        scan.recommended == Some([-3.0, 3.0]),
        format!("{:?}", scan.recommended),
    );
    for o in &summary.outcomes {
        let inf = o.inference.as_ref().expect("inference ran");
        let p = inf.p_value;
        let pass = match o.name.as_str() {
            "male_income" => (0.05..0.10).contains(&p),
            _ => p < 0.05,
        };
        check(&format!("{} p-value", o.name), pass, format!("{p}"));
        if o.name.ends_with("income") {
            let s = &o.sensitivity.as_ref().expect("sensitivity ran")[0];
            let pass = s.ci_low.is_some_and(|l| l <= 90.0) && s.ci_high.is_some_and(|h| h >= 200.0);
            check(
                &format!("{} accepted range at {}", o.name, s.half_width),
                pass,
                format!("{:?}..{:?}", s.ci_low, s.ci_high),
            );
        }
        let b = o.rbounds.as_ref().expect("rbounds ran");
        let uppers: Vec<f64> = b.rows.iter().map(|r| r.p_upper).collect();
        check(
            &format!("{} robust across gamma", o.name),
            b.robust,
            format!("p_upper {uppers:?}"),
        );
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
