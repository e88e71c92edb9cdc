use bbm_core::kernels::{
    bessel3_sample, bridge_hits_with, bridge_min_hits, killed_bm_density, Diffusion, gaussian_step,
};
use bbm_core::quad::{integrate_to_infinity, Tolerance};
use bbm_core::rng::RngStream;
use bbm_core::stats::mean_se;
use proptest::prelude::*;
use rand::{Rng, RngCore};

/// Unit-variance Brownian motion with no drift.
fn standard_bm() -> Diffusion {
    Diffusion {
        sigma: 1.0,
        drift: 0.0,
    }
}

#[test]
fn imhof_duality() {
    let x = 1.0;
    let n = 40_000;
    let dt = 0.02;
    let steps = (1.0 / dt) as usize;
    let phi = |y: f64| (-y).exp();
    let bm = standard_bm();
    let mut rng = RngStream::new(77, 0);
    let mut killed = Vec::with_capacity(n);
    for _ in 0..n {
        let mut y = x;
        let mut alive = true;
        for _ in 0..steps {
            let next = y + gaussian_step(&mut rng, dt, &bm).unwrap();
            if bridge_min_hits(&mut rng, y, next, dt, 0.0, 1.0).unwrap() {
                alive = false;
                break;
            }
            y = next;
        }
        killed.push(if alive { phi(y) } else { 0.0 });
    }
    let mut rng = RngStream::new(77, 1);
    let bessel: Vec<f64> = (0..n)
        .map(|_| {
            let r = bessel3_sample(&mut rng, x, 1.0).unwrap();
            x / r * phi(r)
        })
        .collect();
    let (m1, s1) = mean_se(&killed);
    let (m2, s2) = mean_se(&bessel);
    let joint = (s1 * s1 + s2 * s2).sqrt();
    assert!((m1 - m2).abs() < 3.0 * joint, "{m1} vs {m2}, joint s.e. {joint}");
}

#[test]
fn green_identity() {
    let mut rng = RngStream::new(5, 0);
    let tol = Tolerance::new(1e-12, 1e-10);
    for _ in 0..10 {
        let x: f64 = rng.random_range(0.05..5.0);
        let y: f64 = rng.random_range(0.05..5.0);
        // r = 1/w², which turns the r^{-3/2} tail into a smooth integrand.
        let g = integrate_to_infinity(
            |w| {
                if w <= 0.0 {
                    return 2.0 * x * y / (2.0 * std::f64::consts::PI).sqrt();
                }
                killed_bm_density(1.0 / (w * w), x, y).unwrap() * 2.0 / (w * w * w)
            },
            0.0,
            tol,
        )
        .unwrap();
        let exact = 2.0 * x.min(y);
        assert!((g.value - exact).abs() < 1e-7 + 10.0 * g.error, "x={x} y={y}: {} vs {exact}", g.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn streams_are_deterministic(seed in any::<u64>(), id in any::<u64>()) {
        let mut a = RngStream::new(seed, id);
        let mut b = RngStream::new(seed, id);
        for _ in 0..32 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn bridge_hits_are_monotone_in_level(
        u in 0.0f64..1.0,
        x0 in -2.0f64..4.0,
        x1 in -2.0f64..4.0,
        dt in 1e-4f64..1.0,
        l1 in -3.0f64..3.0,
        lift in 0.0f64..3.0,
    ) {
        if bridge_hits_with(u, x0, x1, dt, l1, 1.0) {
            prop_assert!(bridge_hits_with(u, x0, x1, dt, l1 + lift, 1.0));
        }
    }

    #[test]
    fn killed_density_is_symmetric(r in 1e-3f64..50.0, x in 1e-3f64..10.0, y in 1e-3f64..10.0) {
        let a = killed_bm_density(r, x, y).unwrap();
        let b = killed_bm_density(r, y, x).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        prop_assert!(a >= 0.0);
    }
}
