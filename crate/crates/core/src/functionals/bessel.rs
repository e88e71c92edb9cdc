//! Expectations against the law of `R₁` under `P₀`, density
//! `√(2/π) z² e^{-z²/2}`.

use serde::{Deserialize, Serialize};

use super::FunctionalSpec;
use crate::error::{Error, Result};
use crate::kernels::SQRT_2_OVER_PI;
use crate::quad::{integrate_log_scale, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub error: f64,
}

pub(crate) fn tolerance() -> Tolerance {
    Tolerance::new(1e-15, 1e-13)
}

#[inline]
pub(crate) fn bessel_density0(z: f64) -> f64 {
    SQRT_2_OVER_PI * z * z * (-0.5 * z * z).exp()
}

/// `E[g(s R₁)]` for a function with at most `z^{-alpha}` divergence at the
/// origin (`alpha < 3`) and exponential growth below `rate`.
pub(crate) fn expect_scaled(g: impl Fn(f64) -> f64, s: f64, alpha: f64, rate: f64) -> Result<Expectation> {
    // Integrand ~ z^{2-alpha} at the origin: below e^{w_lo} it is under 1e-17.
    let w_lo = -40.0 / (3.0 - alpha).max(0.05);
    let z_hi = 12.0 + 2.0 * (rate * s).max(0.0);
    let r = integrate_log_scale(|z| g(s * z) * bessel_density0(z), w_lo, z_hi, tolerance())?;
    Ok(Expectation {
        value: r.value,
        error: r.error,
    })
}

fn check_integrable(f: &FunctionalSpec, extra_power: f64) -> Result<f64> {
    let alpha = f.alpha - extra_power;
    if alpha >= 3.0 {
        return Err(Error::NotIntegrable(
            f.key.clone(),
            format!("divergence exponent {alpha} at the origin is not below 3"),
        ));
    }
    Ok(alpha)
}

/// `E[F(R₁)]`.
pub fn expected_bessel_value(f: &FunctionalSpec) -> Result<Expectation> {
    let alpha = check_integrable(f, 0.0)?;
    expect_scaled(|z| f.value(z), 1.0, alpha, f.growth_rate())
}

/// `E[R₁^k F(R₁)]`.
pub fn expected_bessel_moment(f: &FunctionalSpec, k: f64) -> Result<Expectation> {
    let alpha = check_integrable(f, k)?;
    expect_scaled(|z| z.powf(k) * f.value(z), 1.0, alpha, f.growth_rate())
}

/// `E[F'(R₁) + F(R₁)/R₁]`.
pub fn expected_derivative_term(f: &FunctionalSpec) -> Result<Expectation> {
    if f.derivative(1.0).is_none() {
        return Err(Error::MissingDerivative(f.key.clone()));
    }
    let alpha = check_integrable(f, -1.0)?;
    expect_scaled(
        |z| f.derivative(z).unwrap_or(f64::NAN) + f.value(z) / z,
        1.0,
        alpha,
        f.growth_rate(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_r1() {
        let one = expected_bessel_value(&FunctionalSpec::one()).unwrap();
        assert!((one.value - 1.0).abs() < 1e-12);
        let sq = expected_bessel_value(&FunctionalSpec::power(2.0)).unwrap();
        assert!((sq.value - 3.0).abs() < 1e-11);
        let inv = expected_bessel_value(&FunctionalSpec::power(-1.0)).unwrap();
        assert!((inv.value - SQRT_2_OVER_PI).abs() < 1e-11);
        let four = expected_bessel_moment(&FunctionalSpec::power(2.0), 2.0).unwrap();
        assert!((four.value - 15.0).abs() < 1e-10);
    }

    #[test]
    fn power_moments_match_gamma_formula() {
        // E[R^p] = 2^{p/2} Γ((3+p)/2) / Γ(3/2)
        use statrs::function::gamma::gamma;
        for p in [-2.5, -1.5, -0.5, 0.5, 1.0, 3.0] {
            let exact = 2f64.powf(p / 2.0) * gamma((3.0 + p) / 2.0) / gamma(1.5);
            let q = expected_bessel_value(&FunctionalSpec::power(p)).unwrap();
            assert!((q.value - exact).abs() < 1e-9 * exact.max(1.0), "p={p}: {} vs {exact}", q.value);
        }
    }

    #[test]
    fn exponential_functional() {
        // E[e^{θR}] for R with density √(2/π) z² e^{-z²/2}:
        // e^{θ²/2}[(1+θ²)·2Φ(θ)... ] checked against a direct quadrature at a
        // different splitting.
        let f = FunctionalSpec::exp(-1.0);
        let a = expected_bessel_value(&f).unwrap().value;
        let b = crate::quad::integrate(|z| (-z).exp() * bessel_density0(z), 0.0, 40.0, Tolerance::default())
            .unwrap()
            .value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn non_integrable_rejected() {
        let f = FunctionalSpec::power(-3.0);
        assert!(matches!(expected_bessel_value(&f), Err(Error::NotIntegrable(..))));
        let f = FunctionalSpec::power(-2.5);
        assert!(expected_bessel_value(&f).is_ok());
        assert!(expected_derivative_term(&f).is_err());
    }
}
