use bbm_core::engine::EngineConfig;
use bbm_core::functionals::FunctionalSpec;
use bbm_core::harness::{
    empirical_cf, run_ensemble, write_samples_csv, Execution, RunManifest, StatisticMode, StatisticSpec,
};
use bbm_core::kernels::INV_SQRT_2PI;
use bbm_core::rng::RngStream;
use bbm_core::stats::{median, skewness};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::Cauchy;

fn manifest(stat: StatisticSpec, reps: u64) -> RunManifest {
    let mut engine = EngineConfig::new(stat.proxy_time);
    engine.dt = 0.02;
    RunManifest::new(engine, stat, 7, reps)
}

fn csv(m: &RunManifest, exec: Execution) -> Vec<u8> {
    let ens = run_ensemble(m, exec).unwrap();
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &ens).unwrap();
    buf
}

#[test]
fn outputs_are_byte_identical_on_rerun() {
    let m = manifest(StatisticSpec::additive(4.0), 40);
    let again = RunManifest::from_json(&m.to_json()).unwrap();
    assert_eq!(m.hash(), again.hash());
    let a = csv(&m, Execution::default());
    assert_eq!(a, csv(&again, Execution::default()));
    assert_eq!(a, csv(&m, Execution::Sequential));
}

#[test]
fn general_mode_with_constant_functional_is_the_derivative_statistic() {
    let m = manifest(StatisticSpec::general(5.0, FunctionalSpec::one()), 30);
    assert_eq!(m.statistic.mode, StatisticMode::GeneralF);
    let ens = run_ensemble(&m, Execution::default()).unwrap();
    for s in &ens.samples {
        let st = s.t.sqrt();
        let by_hand = st * (s.z_t - s.z_proxy - s.t.ln() / st * INV_SQRT_2PI * s.z_proxy);
        assert!(
            (s.statistic - by_hand).abs() <= 1e-12 * by_hand.abs().max(1.0),
            "replicate {}: {} vs {by_hand}",
            s.replicate,
            s.statistic
        );
    }
}

#[test]
fn additive_statistic_skewness_is_recorded() {
    let ens = run_ensemble(&manifest(StatisticSpec::additive(4.0), 400), Execution::default()).unwrap();
    let x = ens.statistics();
    let halves = [skewness(&x[..200]), skewness(&x[200..]), skewness(&x)];
    println!("additive statistic: median {:.4}, skewness on halves and full {halves:?}", median(&x));
    assert!(median(&x).is_finite());
}

#[test]
fn ecf_standard_errors_cover_bootstrap_spread() {
    let n = 2_000;
    let mut rng = RngStream::new(13, 0);
    let cauchy = Cauchy::new(0.0, 1.0).unwrap();
    let sample: Vec<f64> = (0..n).map(|_| rng.sample(cauchy)).collect();
    let grid = [0.1, 0.5, 1.0, 2.0];
    let base = empirical_cf(&sample, &grid).unwrap();
    let resamples = 100;
    let mut inside = vec![0usize; grid.len()];
    for _ in 0..resamples {
        let boot: Vec<f64> = (0..n).map(|_| sample[rng.random_range(0..n)]).collect();
        for (k, p) in empirical_cf(&boot, &grid).unwrap().iter().enumerate() {
            if (p.value - base[k].value).norm() <= 3.0 * base[k].se {
                inside[k] += 1;
            }
        }
    }
    for (k, c) in inside.iter().enumerate() {
        assert!(*c as f64 >= 0.95 * resamples as f64, "lambda {}: {c}/{resamples}", grid[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ecf_is_conjugate_symmetric(xs in prop::collection::vec(-50.0f64..50.0, 1..40), lambda in 0.0f64..5.0) {
        let e = empirical_cf(&xs, &[lambda, -lambda]).unwrap();
        prop_assert!((e[0].value - e[1].value.conj()).norm() < 1e-12);
        prop_assert!(e[0].value.norm() <= 1.0 + 1e-12);
    }
}
