//! Acceptance criteria. Each test prints one line per criterion:
//! `CRITERION <n> PASS|FAIL <summary>` followed by the individual checks.
//!
//! Two criteria are red by analysis rather than by simulation error, and are
//! reported as FAIL without aborting the run:
//! - 7 (F = x² half): the second-order expansion is exact for x², so the
//!   Richardson ratio is 0/0.
//! - 13: the limit law of the derivative statistic is totally skewed to the
//!   left, so "right-skewed" cannot hold.
//!
//! The test still asserts that they fail in exactly that way.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bbm_core::harness::Verdict;
use bbm_core::suites::{
    decomposition_at, dt_agreement, fluctuations, run_suite, stopping_line_at, FluctuationReport, Suite, SuiteOptions,
};

const SEED: u64 = 2026;

fn opts() -> SuiteOptions {
    SuiteOptions {
        seed: SEED,
        ..SuiteOptions::default()
    }
}

fn report(n: u32, verdicts: &[Verdict], elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let pass = in_time && verdicts.iter().all(|v| v.pass);
    println!(
        "CRITERION {n} {} ({} checks, {:.1} s of {:.0} s budget)",
        if pass { "PASS" } else { "FAIL" },
        verdicts.len(),
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    for v in verdicts {
        println!("    {}", v.line());
    }
    pass
}

fn suite(n: u32, s: Suite, budget_secs: u64) {
    let start = Instant::now();
    let r = run_suite(s, &opts()).expect("suite runs");
    assert!(report(n, &r.verdicts, start.elapsed(), Duration::from_secs(budget_secs)));
}

#[test]
fn criterion_01_normalization() {
    suite(1, Suite::Normalization, 300);
}

#[test]
fn criterion_02_many_to_one() {
    suite(2, Suite::ManyToOne, 120);
}

struct DtRuns {
    stopping: [Vec<Verdict>; 2],
    decomposition: [Vec<Verdict>; 2],
    seconds: [f64; 4],
}

fn dt_runs() -> &'static DtRuns {
    static RUNS: OnceLock<DtRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let o = opts();
        let mut seconds = [0.0; 4];
        let mut timed = |i: usize, f: &dyn Fn() -> Vec<Verdict>| {
            let s = Instant::now();
            let v = f();
            seconds[i] = s.elapsed().as_secs_f64();
            v
        };
        let s0 = timed(0, &|| stopping_line_at(&o, o.dt).unwrap());
        let s1 = timed(1, &|| stopping_line_at(&o, o.dt / 4.0).unwrap());
        let d0 = timed(2, &|| decomposition_at(&o, o.dt).unwrap());
        let d1 = timed(3, &|| decomposition_at(&o, o.dt / 4.0).unwrap());
        DtRuns {
            stopping: [s0, s1],
            decomposition: [d0, d1],
            seconds,
        }
    })
}

#[test]
fn criterion_03_stopping_line() {
    let r = dt_runs();
    let secs = Duration::from_secs_f64(r.seconds[0]);
    assert!(report(3, &r.stopping[0], secs, Duration::from_secs(300)));
}

#[test]
fn criterion_04_global_min() {
    suite(4, Suite::GlobalMin, 120);
}

#[test]
fn criterion_05_appendix_identity() {
    suite(5, Suite::AppendixIdentities, 10);
}

#[test]
fn criterion_06_cauchy_specialization() {
    suite(6, Suite::Cauchy, 10);
}

#[test]
fn criterion_07_g_expansion() {
    let start = Instant::now();
    let r = run_suite(Suite::GExpansion, &opts()).unwrap();
    let pass = report(7, &r.verdicts, start.elapsed(), Duration::from_secs(10));
    if !pass {
        println!("    known red: the expansion is exact for F = x^2, so its ratio is 0/0");
    }
    for v in &r.verdicts {
        if v.check.contains("F=x2") {
            assert!(v.observed.is_nan(), "x^2 residuals should vanish identically: {}", v.line());
        } else {
            assert!(v.pass, "{}", v.line());
        }
    }
}

#[test]
fn criterion_08_decomposition() {
    let r = dt_runs();
    let secs = Duration::from_secs_f64(r.seconds[2]);
    assert!(report(8, &r.decomposition[0], secs, Duration::from_secs(300)));
}

#[test]
fn criterion_09_bessel_densities() {
    suite(9, Suite::Bessel, 60);
}

#[test]
fn criterion_10_dt_robustness() {
    let r = dt_runs();
    let dt = opts().dt;
    let verdicts = [
        dt_agreement(dt, &r.stopping[0], &r.stopping[1]),
        dt_agreement(dt, &r.decomposition[0], &r.decomposition[1]),
    ]
    .concat();
    let secs = Duration::from_secs_f64(r.seconds.iter().sum());
    assert!(report(10, &verdicts, secs, Duration::from_secs(600)));
}

#[test]
fn criterion_11_gibbs_convergence() {
    suite(11, Suite::Gibbs, 1800);
}

fn fluct() -> &'static (FluctuationReport, f64) {
    static RUN: OnceLock<(FluctuationReport, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let s = Instant::now();
        let r = fluctuations(&opts()).unwrap();
        (r, s.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_12_additive_fluctuation_tail() {
    let (r, secs) = fluct();
    assert!(r.ensemble.net_size() >= 2000, "net ensemble {}", r.ensemble.net_size());
    let (notes, checks): (Vec<&Verdict>, Vec<&Verdict>) = r
        .verdicts
        .iter()
        .filter(|v| !v.check.contains("derivative"))
        .partition(|v| v.check.contains("informational"));
    let v: Vec<Verdict> = checks.into_iter().cloned().collect();
    let pass = report(12, &v, Duration::from_secs_f64(*secs), Duration::from_secs(7200));
    for n in notes {
        println!("    note: {}", n.line().trim_start_matches("PASS "));
    }
    assert!(pass);
}

#[test]
fn criterion_13_derivative_fluctuation_sign() {
    let (r, secs) = fluct();
    let v: Vec<Verdict> = r.verdicts.iter().filter(|v| v.check.contains("derivative")).cloned().collect();
    let pass = report(13, &v, Duration::from_secs_f64(*secs), Duration::from_secs(7200));
    if !pass {
        println!("    known red: the limit law is totally skewed to the left (beta = -1), so the lower tail dominates");
        // Red in the documented direction: the lower tail is the heavy one.
        assert!(v[0].observed < v[0].predicted, "{}", v[0].line());
    }
}
