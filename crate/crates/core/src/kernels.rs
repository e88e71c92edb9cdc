//! Stochastic and analytic kernels: Gaussian increments, branching clocks,
//! offspring draws, bridge barrier crossings, the Bessel-3 law and the
//! density of Brownian motion killed at 0.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// √(2/π), also E[1/R₁] for the Bessel-3 process started at 0.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Brownian motion with variance `sigma²` per unit time and drift `drift`.
/// The default is the critical normalization `σ = 1`, drift 1, under which
/// `Σ e^{-X_u(t)}` is a mean-one martingale for the binary law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diffusion {
    pub sigma: f64,
    pub drift: f64,
}

impl Default for Diffusion {
    fn default() -> Self {
        Diffusion {
            sigma: 1.0,
            drift: 1.0,
        }
    }
}

impl Diffusion {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be positive and finite, got {}", self.sigma)));
        }
        if !self.drift.is_finite() {
            return Err(Error::param("drift", "must be finite"));
        }
        Ok(())
    }

    /// Increment over `dt` without argument checks; for the engine's inner loop.
    #[inline]
    pub fn increment(&self, rng: &mut RngStream, dt: f64) -> f64 {
        let g: f64 = rng.sample(StandardNormal);
        self.drift * dt + self.sigma * dt.sqrt() * g
    }
}

/// Offspring law on {0, 1, 2, ...} with finite second moment and mean above one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OffspringLaw {
    pmf: Vec<f64>,
    cumulative: Vec<f64>,
    mean: f64,
    second_moment: f64,
}

impl OffspringLaw {
    /// `pmf[k]` is the probability of `k` children.
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidLaw("empty pmf".into()));
        }
        if pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidLaw("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}, not 1")));
        }
        let pmf: Vec<f64> = pmf.iter().map(|p| p / total).collect();
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let second_moment: f64 = pmf.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum();
        if mean <= 1.0 {
            return Err(Error::InvalidLaw(format!("mean {mean} must exceed 1")));
        }
        let mut acc = 0.0;
        let cumulative = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(OffspringLaw {
            pmf,
            cumulative,
            mean,
            second_moment,
        })
    }

    /// `L ≡ 2`.
    pub fn binary() -> Self {
        OffspringLaw::new(vec![0.0, 0.0, 1.0]).expect("binary law is valid")
    }

    /// Builds a law from `(count, probability)` pairs.
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Result<Self> {
        let n = pairs.iter().map(|(k, _)| *k).max().unwrap_or(0) + 1;
        let mut pmf = vec![0.0; n];
        for &(k, p) in pairs {
            pmf[k] += p;
        }
        OffspringLaw::new(pmf)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Branching rate `1 / (2 (m - 1))`.
    pub fn rate(&self) -> f64 {
        1.0 / (2.0 * (self.mean - 1.0))
    }

    /// `λ E[L(L-1)]`, the constant in the second-moment formula. Equal to 1
    /// for the binary law.
    pub fn many_to_two_constant(&self) -> f64 {
        self.rate() * (self.second_moment - self.mean)
    }

    #[inline]
    fn sample_with(&self, u: f64) -> usize {
        // Last index is returned when rounding leaves u above the final sum.
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.pmf.len() - 1)
    }
}

impl Default for OffspringLaw {
    fn default() -> Self {
        OffspringLaw::binary()
    }
}

impl TryFrom<Vec<f64>> for OffspringLaw {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        OffspringLaw::new(v)
    }
}

impl From<OffspringLaw> for Vec<f64> {
    fn from(law: OffspringLaw) -> Vec<f64> {
        law.pmf
    }
}

/// Displacement of the diffusion over `dt`.
pub fn gaussian_step(rng: &mut RngStream, dt: f64, diffusion: &Diffusion) -> Result<f64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive and finite, got {dt}")));
    }
    Ok(diffusion.increment(rng, dt))
}

/// Exponential lifetime with rate `law.rate()`.
#[inline]
pub fn branch_time(rng: &mut RngStream, law: &OffspringLaw) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / law.rate()
}

#[inline]
pub fn offspring_count(rng: &mut RngStream, law: &OffspringLaw) -> usize {
    if law.pmf.len() == 3 && law.pmf[2] == 1.0 {
        return 2;
    }
    law.sample_with(rng.open01())
}

/// Probability that a Brownian bridge from `x0` to `x1` over `dt` with
/// variance `sigma²` per unit time goes at or below `level`.
#[inline]
pub fn bridge_hit_probability(x0: f64, x1: f64, dt: f64, level: f64, sigma: f64) -> f64 {
    let a = x0 - level;
    let b = x1 - level;
    if a <= 0.0 || b <= 0.0 {
        return 1.0;
    }
    (-2.0 * a * b / (sigma * sigma * dt)).exp()
}

/// Crossing decision for a fixed uniform draw `u`. Monotone in `level`.
#[inline]
pub fn bridge_hits_with(u: f64, x0: f64, x1: f64, dt: f64, level: f64, sigma: f64) -> bool {
    u < bridge_hit_probability(x0, x1, dt, level, sigma)
}

/// Whether the bridge between two grid points touches `level`.
pub fn bridge_min_hits(rng: &mut RngStream, x0: f64, x1: f64, dt: f64, level: f64, sigma: f64) -> Result<bool> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    Ok(bridge_hits_with(rng.open01(), x0, x1, dt, level, sigma))
}

/// Like [`bridge_min_hits`], returning a crossing time drawn uniformly on the
/// step (as an offset in `[0, dt)`) when a crossing occurs.
pub fn bridge_crossing(rng: &mut RngStream, x0: f64, x1: f64, dt: f64, level: f64, sigma: f64) -> Result<Option<f64>> {
    if bridge_min_hits(rng, x0, x1, dt, level, sigma)? {
        Ok(Some(rng.open01() * dt))
    } else {
        Ok(None)
    }
}

/// Bessel-3 process at time `t` started from `x`: the norm of a
/// three-dimensional Gaussian centred at `(x, 0, 0)`.
pub fn bessel3_sample(rng: &mut RngStream, x: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    if !(x >= 0.0) {
        return Err(Error::param("x", format!("must be non-negative, got {x}")));
    }
    let s = t.sqrt();
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let g3: f64 = rng.sample(StandardNormal);
    let a = x + s * g1;
    let b = s * g2;
    let c = s * g3;
    Ok((a * a + b * b + c * c).sqrt())
}

// Time-one density, no argument checks.
fn bessel3_density_unit(x: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return SQRT_2_OVER_PI * z * z * (-0.5 * z * z).exp();
    }
    // (1 - e^{-2zx}) / x, accurate for small x.
    let ratio = -(-2.0 * z * x).exp_m1() / x;
    z * ratio * norm_pdf(z - x)
}

/// Density at `z` of `R_t` under `P_x`.
pub fn bessel3_density(x: f64, t: f64, z: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    if !(z >= 0.0) {
        return Err(Error::param("z", format!("must be non-negative, got {z}")));
    }
    if !(x >= 0.0) {
        return Err(Error::param("x", format!("must be non-negative, got {x}")));
    }
    let s = t.sqrt();
    Ok(bessel3_density_unit(x / s, z / s) / s)
}

/// Distribution function of `R_t` under `P_x`, closed form.
pub fn bessel3_cdf(x: f64, t: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let s = t.sqrt();
    let (x, r) = (x / s, r / s);
    if x < 1e-6 {
        return (2.0 * norm_cdf(r) - 1.0 - SQRT_2_OVER_PI * r * (-0.5 * r * r).exp()).clamp(0.0, 1.0);
    }
    let v = (norm_pdf(r + x) - norm_pdf(r - x)) / x + norm_cdf(r - x) + norm_cdf(r + x) - 1.0;
    v.clamp(0.0, 1.0)
}

/// Transition density of Brownian motion killed at 0,
/// `q_r(x, y) = (2πr)^{-1/2} (e^{-(x-y)²/2r} - e^{-(x+y)²/2r})`.
pub fn killed_bm_density(r: f64, x: f64, y: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::param("r", format!("must be positive, got {r}")));
    }
    if !(x > 0.0) {
        return Err(Error::param("x", format!("must be positive, got {x}")));
    }
    if !(y > 0.0) {
        return Err(Error::param("y", format!("must be positive, got {y}")));
    }
    Ok(killed_bm_density_unchecked(r, x, y))
}

#[inline]
pub(crate) fn killed_bm_density_unchecked(r: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    (2.0 * PI * r).sqrt().recip() * (-d * d / (2.0 * r)).exp() * -(-2.0 * x * y / r).exp_m1()
}

/// `P(τ_h ≤ r)` for the first time standard Brownian motion drops by `h ≥ 0`.
#[inline]
pub fn first_passage_cdf(h: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return if h <= 0.0 { 1.0 } else { 0.0 };
    }
    if !r.is_finite() {
        return 1.0;
    }
    if h <= 0.0 {
        return 1.0;
    }
    erfc(h / (2.0 * r).sqrt())
}

/// Density of `τ_h`: `h e^{-h²/2r} / (√(2π) r^{3/2})`.
#[inline]
pub fn first_passage_density(h: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    h * INV_SQRT_2PI * (-h * h / (2.0 * r)).exp() * r.powf(-1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, integrate_to_infinity, Tolerance};
    use crate::stats::mean_se;

    fn draws(n: usize, mut f: impl FnMut(&mut RngStream) -> f64) -> Vec<f64> {
        let mut rng = RngStream::new(2024, 1);
        (0..n).map(|_| f(&mut rng)).collect()
    }

    #[test]
    fn gaussian_step_rejects_zero_dt() {
        let mut rng = RngStream::new(0, 0);
        assert!(gaussian_step(&mut rng, 0.0, &Diffusion::default()).is_err());
        assert!(gaussian_step(&mut rng, -1.0, &Diffusion::default()).is_err());
    }

    #[test]
    fn gaussian_step_mean_matches_drift() {
        let d = Diffusion::default();
        let v = draws(1_000_000, |r| gaussian_step(r, 1.0, &d).unwrap());
        let (m, se) = mean_se(&v);
        assert!((m - d.drift).abs() < 3.0 * se, "mean {m} ± {se}");

        let half = Diffusion { sigma: 1.0, drift: 0.5 };
        let v = draws(1_000_000, |r| gaussian_step(r, 1.0, &half).unwrap());
        let (m, se) = mean_se(&v);
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m} ± {se}");
    }

    #[test]
    fn gaussian_step_variance_scales_with_dt() {
        let d = Diffusion::default();
        let v = draws(1_000_000, |r| gaussian_step(r, 2.0, &d).unwrap() - 2.0);
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - 2.0).abs() < 3.0 * se, "var {m} ± {se}");
    }

    #[test]
    fn branch_time_means() {
        let law = OffspringLaw::binary();
        assert_eq!(law.rate(), 0.5);
        let v = draws(1_000_000, |r| branch_time(r, &law));
        let (m, se) = mean_se(&v);
        assert!((m - 2.0).abs() < 3.0 * se);
        // P(T > 1/λ) = e^{-1}
        let tail: Vec<f64> = v.iter().map(|&t| if t > 2.0 { 1.0 } else { 0.0 }).collect();
        let (p, se) = mean_se(&tail);
        assert!((p - (-1.0f64).exp()).abs() < 3.0 * se);

        let law3 = OffspringLaw::from_pairs(&[(3, 1.0)]).unwrap();
        assert_eq!(law3.rate(), 0.25);
        let v = draws(1_000_000, |r| branch_time(r, &law3));
        let (m, se) = mean_se(&v);
        assert!((m - 4.0).abs() < 3.0 * se);
    }

    #[test]
    fn offspring_counts() {
        let bin = OffspringLaw::binary();
        let mut rng = RngStream::new(5, 5);
        assert!((0..1000).all(|_| offspring_count(&mut rng, &bin) == 2));

        let law = OffspringLaw::from_pairs(&[(0, 0.1), (2, 0.9)]).unwrap();
        let v = draws(100_000, |r| (offspring_count(r, &law) == 0) as u8 as f64);
        let (p, se) = mean_se(&v);
        assert!((p - 0.1).abs() < 3.0 * se);

        let law = OffspringLaw::from_pairs(&[(1, 0.5), (3, 0.5)]).unwrap();
        let v = draws(100_000, |r| offspring_count(r, &law) as f64);
        let (m, se) = mean_se(&v);
        assert!((m - 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(OffspringLaw::new(vec![0.5, 0.5]).is_err());
        assert!(OffspringLaw::new(vec![0.2, 0.2]).is_err());
        assert!(OffspringLaw::new(vec![]).is_err());
        assert!(OffspringLaw::new(vec![-0.1, 0.1, 1.0]).is_err());
    }

    #[test]
    fn many_to_two_constant_binary() {
        assert_eq!(OffspringLaw::binary().many_to_two_constant(), 1.0);
    }

    #[test]
    fn bridge_endpoint_at_level_hits() {
        let mut rng = RngStream::new(1, 1);
        assert!(bridge_min_hits(&mut rng, 0.0, 3.0, 1.0, 0.0, 1.0).unwrap());
        assert!(bridge_min_hits(&mut rng, 3.0, -1.0, 1.0, 0.0, 1.0).unwrap());
        assert!(bridge_min_hits(&mut rng, 1.0, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn bridge_crossing_frequency() {
        let v = draws(100_000, |r| bridge_min_hits(r, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap() as u8 as f64);
        let (p, se) = mean_se(&v);
        assert!((p - (-2.0f64).exp()).abs() < 3.0 * se, "{p} ± {se}");

        let v = draws(100_000, |r| bridge_min_hits(r, 5.0, 5.0, 0.01, 0.0, 1.0).unwrap() as u8 as f64);
        assert!(v.iter().sum::<f64>() / 1e5 < 1e-3);
    }

    #[test]
    fn bridge_crossing_agrees_with_fine_walk() {
        // Random-walk oracle: 2000 substeps of the bridge from 1 to 1 over unit time.
        let n_paths = 20_000;
        let n_sub = 2000;
        let mut rng = RngStream::new(77, 3);
        let mut hits = 0usize;
        for _ in 0..n_paths {
            let h = 1.0 / n_sub as f64;
            let mut w = 0.0;
            let mut path = Vec::with_capacity(n_sub + 1);
            path.push(0.0);
            for _ in 0..n_sub {
                let g: f64 = rng.sample(StandardNormal);
                w += h.sqrt() * g;
                path.push(w);
            }
            let end = w;
            let mut hit = false;
            for (k, wk) in path.iter().enumerate() {
                let s = k as f64 * h;
                let b = 1.0 + wk - s * end;
                if b <= 0.0 {
                    hit = true;
                    break;
                }
            }
            hits += hit as usize;
        }
        let p = hits as f64 / n_paths as f64;
        let exact = (-2.0f64).exp();
        // Discrete monitoring misses excursions: p sits slightly below exact.
        assert!(p < exact + 3.0 * (exact / n_paths as f64).sqrt());
        assert!(p > 0.8 * exact, "fine walk {p} vs {exact}");
    }

    #[test]
    fn bessel_samples_moments() {
        let v = draws(1_000_000, |r| bessel3_sample(r, 0.0, 1.0).unwrap());
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - 3.0).abs() < 3.0 * se);
        let inv: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
        let (m, se) = mean_se(&inv);
        assert!((m - SQRT_2_OVER_PI).abs() < 3.0 * se, "{m} ± {se}");

        let mut rng = RngStream::new(9, 9);
        for _ in 0..1000 {
            let r = bessel3_sample(&mut rng, 10.0, 1e-6).unwrap();
            assert!((r - 10.0).abs() < 0.1);
        }
    }

    #[test]
    fn bessel_density_values() {
        let v = bessel3_density(0.0, 1.0, 1.0).unwrap();
        assert!((v - 0.483_941_449_038_286_7).abs() < 1e-12);
        let v0 = bessel3_density(0.0, 1.0, 1.0).unwrap();
        let vx = bessel3_density(1e-7, 1.0, 1.0).unwrap();
        assert!((v0 - vx).abs() < 1e-6);
        assert!(bessel3_density(0.0, 0.0, 1.0).is_err());
        assert!(bessel3_density(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn bessel_density_normalized() {
        for (x, t) in [(2.0, 1.0), (0.0, 1.0), (1.0, 4.0), (0.3, 0.2)] {
            let r = integrate_to_infinity(|z| bessel3_density(x, t, z).unwrap(), 0.0, Tolerance::default()).unwrap();
            assert!((r.value - 1.0).abs() < 1e-8, "x={x} t={t}: {}", r.value);
        }
    }

    #[test]
    fn bessel_cdf_matches_density_integral() {
        for (x, t) in [(0.0, 1.0), (2.0, 1.0), (1.0, 4.0), (1e-3, 1.0)] {
            for r in [0.3, 1.0, 2.5, 5.0] {
                let q = integrate(|z| bessel3_density(x, t, z).unwrap(), 0.0, r, Tolerance::default()).unwrap();
                assert!((q.value - bessel3_cdf(x, t, r)).abs() < 1e-9, "x={x} t={t} r={r}");
            }
        }
    }

    #[test]
    fn killed_density_values() {
        let v = killed_bm_density(1.0, 1.0, 1.0).unwrap();
        let expected = INV_SQRT_2PI * (1.0 - (-2.0f64).exp());
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.344_95).abs() < 1e-5);
        assert!(killed_bm_density(0.0, 1.0, 1.0).is_err());
        assert!(killed_bm_density(1.0, 0.0, 1.0).is_err());
        assert!(killed_bm_density(1.0, 1.0, -1.0).is_err());
        for &x in &[0.1, 0.7, 2.0, 5.0] {
            for &y in &[0.2, 1.3, 4.0] {
                for &r in &[0.01, 1.0, 30.0] {
                    assert_eq!(killed_bm_density(r, x, y).unwrap(), killed_bm_density(r, y, x).unwrap());
                }
            }
        }
    }

    #[test]
    fn first_passage_density_integrates_to_cdf() {
        for &h in &[0.5, 1.0, 3.0] {
            for &r in &[0.5, 2.0, 10.0] {
                let q = integrate(|s| first_passage_density(h, s), 0.0, r, Tolerance::default()).unwrap();
                assert!((q.value - first_passage_cdf(h, r)).abs() < 1e-10);
            }
        }
    }
}
