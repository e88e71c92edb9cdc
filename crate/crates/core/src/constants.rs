//! Analytic limit objects: the shift profile `H`, the constants of the
//! conditional 1-stable limit, the `log t` coefficient, the second-order
//! Bessel expansion, limit characteristic functions and the `μ_Z` estimator.
//!
//! Integrals against `u^{-3/2} du` over `(0, 1)` are split at `u = 1/2`. On
//! `(0, 1/2]` the substitution `u = v²` turns the weight into `2 dv / v²`,
//! which is bounded against `H(u) = O(u)`. On `[1/2, 1)` the substitution
//! `u = 1 - e^{-w}` unfolds the `(1-u)^{-α/2}` growth of `H` for functionals
//! diverging at the origin into an exponentially decaying tail in `w`.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    bessel_density0, expect_scaled, expected_bessel_moment, expected_bessel_value, expected_derivative_term,
    FunctionalSpec, Shape,
};
use crate::kernels::{bessel3_density, EULER_GAMMA, INV_SQRT_2PI, SQRT_2_OVER_PI};
use crate::quad::{integrate, integrate_log_scale, integrate_to_infinity, Tolerance};

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub outer: Tolerance,
    pub inner: Tolerance,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            outer: Tolerance::new(1e-13, 1e-11),
            inner: Tolerance::new(1e-15, 1e-13),
        }
    }
}

impl QuadOptions {
    pub fn halved(self) -> Self {
        QuadOptions {
            outer: self.outer.halved(),
            inner: self.inner.halved(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileValue {
    pub value: f64,
    pub error: f64,
}

/// Shift profile of one functional, with `E[F(R₁)]` computed once.
pub struct ShiftProfile<'a> {
    f: &'a FunctionalSpec,
    mean: f64,
    opts: QuadOptions,
    constant: bool,
}

impl<'a> ShiftProfile<'a> {
    pub fn new(f: &'a FunctionalSpec) -> Result<Self> {
        Self::with_options(f, QuadOptions::default())
    }

    pub fn with_options(f: &'a FunctionalSpec, opts: QuadOptions) -> Result<Self> {
        if f.alpha >= 2.0 {
            return Err(Error::NotIntegrable(
                f.key.clone(),
                format!("|H(u)| u^(-3/2) is not integrable at u = 1 for divergence exponent {}", f.alpha),
            ));
        }
        let mean = expected_bessel_value(f)?.value;
        Ok(ShiftProfile {
            f,
            mean,
            opts,
            constant: matches!(f.shape, Shape::One),
        })
    }

    /// `E[F(R₁)]`
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `H(u)` for `u ≥ 0`.
    pub fn at(&self, u: f64) -> Result<ProfileValue> {
        if !(u >= 0.0) {
            return Err(Error::param("u", format!("must be non-negative, got {u}")));
        }
        if u >= 1.0 {
            return Ok(ProfileValue {
                value: -self.mean,
                error: 0.0,
            });
        }
        self.at_complement(1.0 - u, u)
    }

    /// `H` at `u = 1 - v`; `v` is passed directly so that `u` within an ulp
    /// of 1 keeps full precision.
    fn at_complement(&self, v: f64, u: f64) -> Result<ProfileValue> {
        if self.constant || u == 0.0 {
            return Ok(ProfileValue { value: 0.0, error: 0.0 });
        }
        let f = self.f;
        if v >= 0.5 {
            // H(u) = ∫ F(y) p(y) [(1-u)^{-3/2} e^{-y² u / 2(1-u)} - 1] dy
            let a = -1.5 * v.ln();
            let b = 0.5 * u / v;
            let w_lo = -40.0 / (3.0 - f.alpha).max(0.05);
            let r = integrate_log_scale(
                |y| f.value(y) * bessel_density0(y) * (a - b * y * y).exp_m1(),
                w_lo,
                12.0 + 2.0 * f.growth_rate().max(0.0),
                self.opts.inner,
            )?;
            Ok(ProfileValue {
                value: r.value,
                error: r.error,
            })
        } else {
            let e = expect_scaled(|z| f.value(z), v.sqrt(), f.alpha, f.growth_rate())?;
            Ok(ProfileValue {
                value: e.value - self.mean,
                error: e.error,
            })
        }
    }

    /// `∫₀¹ ψ(H(u)) u^{-3/2} du`.
    fn unit_integral(&self, psi: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
        let head = integrate(
            |v| {
                let u = v * v;
                match self.at_complement(1.0 - u, u) {
                    Ok(h) => 2.0 * psi(h.value) / u,
                    Err(_) => f64::NAN,
                }
            },
            0.0,
            std::f64::consts::FRAC_1_SQRT_2,
            self.opts.outer,
        )?;
        let tail = integrate_to_infinity(
            |w| {
                let v = (-w).exp();
                let u = -(-w).exp_m1();
                match self.at_complement(v, u) {
                    Ok(h) => psi(h.value) * u.powf(-1.5) * v,
                    Err(_) => f64::NAN,
                }
            },
            LN_2,
            self.opts.outer,
        )?;
        Ok((head.value + tail.value, head.error + tail.error))
    }
}

/// `H(u) = E[F(√(1-u) R₁)] - E[F(R₁)]` for `u < 1`, `-E[F(R₁)]` for `u ≥ 1`.
pub fn shift_profile(f: &FunctionalSpec, u: f64) -> Result<ProfileValue> {
    ShiftProfile::new(f)?.at(u)
}

/// Constants of the conditional 1-stable limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableLawParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mu_z: f64,
    pub quadrature_error: f64,
}

#[inline]
fn h_log_h(h: f64, mu: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        h * (h.abs().ln() - mu)
    }
}

/// `c₁ = (2π)^{-1/2} ∫₀¹ H u^{-3/2}`, `c₂ = ½√(π/2) ∫₀¹ |H| u^{-3/2}`,
/// `c₃ = (2π)^{-1/2} ∫₀¹ H (log|H| - μ_Z) u^{-3/2}`.
pub fn prop_constants(f: &FunctionalSpec, mu_z: f64) -> Result<StableLawParams> {
    prop_constants_with(f, mu_z, QuadOptions::default())
}

pub fn prop_constants_with(f: &FunctionalSpec, mu_z: f64, opts: QuadOptions) -> Result<StableLawParams> {
    let prof = ShiftProfile::with_options(f, opts)?;
    let (i1, e1) = prof.unit_integral(|h| h)?;
    let (i2, e2) = prof.unit_integral(f64::abs)?;
    let (i3, e3) = prof.unit_integral(|h| h_log_h(h, mu_z))?;
    let half_sqrt = 0.5 * (PI / 2.0).sqrt();
    // Inner quadratures are relative to |H|, so they add a relative error of
    // the inner tolerance on the |H| integral.
    let inner = 10.0 * opts.inner.rel * i2 * (1.0 + mu_z.abs());
    Ok(StableLawParams {
        c1: INV_SQRT_2PI * i1,
        c2: half_sqrt * i2,
        c3: INV_SQRT_2PI * i3,
        mu_z,
        quadrature_error: INV_SQRT_2PI * (e1 + e3) + half_sqrt * e2 + inner,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityGap {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub quadrature_error: f64,
}

/// Both sides of
/// `(2π)^{-1/2} ∫₀¹ H(u) u^{-3/2} du = √(2/π) E[F(R₁)] - E[F'(R₁) + F(R₁)/R₁]`.
pub fn appendix_identity_gap(f: &FunctionalSpec) -> Result<IdentityGap> {
    let prof = ShiftProfile::new(f)?;
    let (i1, e1) = prof.unit_integral(|h| h)?;
    let d = expected_derivative_term(f)?;
    let lhs = INV_SQRT_2PI * i1;
    let rhs = SQRT_2_OVER_PI * prof.mean() - d.value;
    Ok(IdentityGap {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        quadrature_error: INV_SQRT_2PI * e1 + d.error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub value: f64,
    pub error: f64,
}

/// `√(2/π) ∫₀^∞ H d(-1/√u) = √(2/π) (½ ∫₀¹ H u^{-3/2} du - E[F(R₁)])`.
pub fn logt_coefficient(f: &FunctionalSpec) -> Result<Coefficient> {
    logt_coefficient_with(f, QuadOptions::default())
}

pub fn logt_coefficient_with(f: &FunctionalSpec, opts: QuadOptions) -> Result<Coefficient> {
    let prof = ShiftProfile::with_options(f, opts)?;
    let (i1, e1) = prof.unit_integral(|h| h)?;
    Ok(Coefficient {
        value: SQRT_2_OVER_PI * (0.5 * i1 - prof.mean()),
        error: SQRT_2_OVER_PI * 0.5 * e1,
    })
}

/// `G(x) = E[F(R₁)](3/2 - x²/2) + E[R₁² F(R₁)](x²/6 - 1/2)`.
pub fn expansion_g(f: &FunctionalSpec, x: f64) -> Result<f64> {
    let m0 = expected_bessel_value(f)?.value;
    let m2 = expected_bessel_moment(f, 2.0)?.value;
    Ok(expansion_g_from(m0, m2, x))
}

fn expansion_g_from(m0: f64, m2: f64, x: f64) -> f64 {
    m0 * (1.5 - 0.5 * x * x) + m2 * (x * x / 6.0 - 0.5)
}

/// `|E_{x√ε}[F(R_{1-ε})] - E[F(R₁)] - ε G(x)|`.
pub fn expansion_residual(f: &FunctionalSpec, x: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::param("eps", format!("must lie in (0, 1/2), got {eps}")));
    }
    if !(x >= 0.0) {
        return Err(Error::param("x", format!("must be non-negative, got {x}")));
    }
    if matches!(f.shape, Shape::One) {
        return Ok(0.0);
    }
    let m0 = expected_bessel_value(f)?.value;
    let m2 = expected_bessel_moment(f, 2.0)?.value;
    let y = x * eps.sqrt();
    let tau = 1.0 - eps;
    let lhs = if y == 0.0 {
        expect_scaled(|z| f.value(z), tau.sqrt(), f.alpha, f.growth_rate())?.value
    } else {
        let w_lo = -40.0 / (3.0 - f.alpha).max(0.05);
        integrate_log_scale(
            |z| f.value(z) * bessel3_density(y, tau, z).unwrap_or(f64::NAN),
            w_lo,
            y + 12.0 + 2.0 * f.growth_rate().max(0.0),
            Tolerance::new(1e-16, 1e-14),
        )?
        .value
    };
    Ok((lhs - m0 - eps * expansion_g_from(m0, m2, x)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitRange {
    /// Killing times in `[0, 1]` (relative), the conditional law of the
    /// partial statistic.
    Unit,
    /// Killing times in `[0, ∞)`, the full fluctuation limit.
    Full,
}

/// `log φ(λ) = z [-scale |λ| + iλ (log_coeff · log|λ| + drift)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableExponent {
    pub scale: f64,
    pub log_coeff: f64,
    pub drift: f64,
    pub quadrature_error: f64,
}

impl StableExponent {
    pub fn cf(&self, lambda: f64, z: f64) -> Complex64 {
        if lambda == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let l = lambda.abs().ln();
        let e = Complex64::new(-self.scale * lambda.abs(), lambda * (self.log_coeff * l + self.drift));
        (z * e).exp()
    }

    pub fn from_prop(p: &StableLawParams) -> Self {
        StableExponent {
            scale: p.c2,
            log_coeff: -p.c1,
            drift: -p.c3,
            quadrature_error: p.quadrature_error,
        }
    }
}

/// Exponent of the full-range limit, assembled from the `(0,1)` integrals
/// and the closed-form tail on `[1, ∞)` where `H ≡ -E[F(R₁)]`.
pub fn full_range_constants(f: &FunctionalSpec, mu_z: f64) -> Result<StableExponent> {
    let p = prop_constants(f, mu_z)?;
    let m = expected_bessel_value(f)?.value;
    // ∫₁^∞ u^{-3/2} du = 2
    let tail_scale = (PI / 2.0) * INV_SQRT_2PI * 2.0 * m.abs();
    let tail_h = INV_SQRT_2PI * 2.0 * (-m);
    let tail_hlog = INV_SQRT_2PI * 2.0 * h_log_h(-m, mu_z);
    Ok(StableExponent {
        scale: p.c2 + tail_scale,
        log_coeff: -(p.c1 + tail_h),
        drift: -(p.c3 + tail_hlog),
        quadrature_error: p.quadrature_error,
    })
}

/// Limit characteristic function given `Z_∞ = z`.
///
/// `Unit` evaluates `exp(-z[c₂|λ| + iλ(c₁ log|λ| + c₃)])`. `Full` integrates
/// the increment exponent `(π/2)|λH| + iλH(log|λH| - μ_Z)` against
/// `(2π)^{-1/2} u^{-3/2} du` on `(0, ∞)` directly, at the given `λ`.
pub fn limit_cf(f: &FunctionalSpec, lambda: f64, z: f64, range: LimitRange, mu_z: f64) -> Result<Complex64> {
    if !(z >= 0.0) {
        return Err(Error::param("z", format!("must be non-negative, got {z}")));
    }
    if lambda == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    match range {
        LimitRange::Unit => Ok(StableExponent::from_prop(&prop_constants(f, mu_z)?).cf(lambda, z)),
        LimitRange::Full => {
            let prof = ShiftProfile::new(f)?;
            let re = |h: f64| (PI / 2.0) * (lambda * h).abs();
            let im = |h: f64| lambda * h_log_h(h, mu_z - lambda.abs().ln());
            let (ir, _) = prof.unit_integral(re)?;
            let (ii, _) = prof.unit_integral(im)?;
            let h_tail = -prof.mean();
            let exponent = INV_SQRT_2PI * Complex64::new(ir + 2.0 * re(h_tail), ii + 2.0 * im(h_tail));
            let cf = (-z * exponent).exp();
            if !(cf.re.is_finite() && cf.im.is_finite()) {
                return Err(Error::Quadrature(format!("divergent composition for {}", f.key)));
            }
            Ok(cf)
        }
    }
}

/// One grid point of the truncated-mean curve
/// `g(x) = mean(z 1{z ≤ x}) - log x - γ + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMeanPoint {
    pub x: f64,
    pub g: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuZEstimate {
    pub value: f64,
    pub se: f64,
    /// Grid window `[x_lo, x_hi]` the estimate was read from.
    pub window: (f64, f64),
    /// `|Δg| / s.e.(Δg)` on that window.
    pub flatness: f64,
    pub plateau: bool,
    pub warning: Option<String>,
    pub curve: Vec<TruncatedMeanPoint>,
}

/// Reads `μ_Z` off the flattest window of the truncated-mean curve. A window
/// counts as a plateau when the change of `g` across it is within three
/// standard errors of zero.
pub fn mu_z_estimate(samples: &[f64], x_grid: &[f64]) -> Result<MuZEstimate> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::InsufficientSamples(format!("μ_Z estimate needs at least 10 samples, got {n}")));
    }
    if x_grid.len() < 2 {
        return Err(Error::InsufficientSamples("μ_Z estimate needs at least two grid points".into()));
    }
    let mut grid = x_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    if grid[0] <= 0.0 {
        return Err(Error::param("x_grid", "grid points must be positive"));
    }
    let nf = n as f64;
    let mean_se_of = |pred: &dyn Fn(f64) -> bool| {
        let vals = samples.iter().map(|&z| if pred(z) { z } else { 0.0 });
        let (s, s2) = vals.fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
        let m = s / nf;
        let var = (s2 / nf - m * m).max(0.0) * nf / (nf - 1.0);
        (m, (var / nf).sqrt())
    };
    let curve: Vec<TruncatedMeanPoint> = grid
        .iter()
        .map(|&x| {
            let (m, se) = mean_se_of(&|z| z <= x);
            TruncatedMeanPoint {
                x,
                g: m - x.ln() - EULER_GAMMA + 1.0,
                se,
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..curve.len() - 1 {
        let (lo, hi) = (curve[i].x, curve[i + 1].x);
        let (_, se) = mean_se_of(&|z| z > lo && z <= hi);
        let dg = curve[i + 1].g - curve[i].g;
        let flat = if se > 0.0 {
            dg.abs() / se
        } else if dg.abs() < 1e-14 {
            0.0
        } else {
            f64::INFINITY
        };
        if best.is_none_or(|(_, b)| flat < b) {
            best = Some((i, flat));
        }
    }
    let (i, flatness) = best.expect("grid has a window");
    let plateau = flatness < 3.0;
    let value = 0.5 * (curve[i].g + curve[i + 1].g);
    let se = 0.5 * (curve[i].se + curve[i + 1].se);
    let monotone = curve.windows(2).all(|w| w[1].g < w[0].g) || curve.windows(2).all(|w| w[1].g > w[0].g);
    let warning = (!plateau).then(|| {
        format!(
            "no plateau on the grid (flattest window moves {flatness:.1} s.e.{})",
            if monotone { "; curve is monotone" } else { "" }
        )
    });
    Ok(MuZEstimate {
        value,
        se,
        window: (curve[i].x, curve[i + 1].x),
        flatness,
        plateau,
        warning,
        curve,
    })
}

pub const CONSTANTS_FORMAT: &str = "bbm-constants/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub format: String,
    pub functional: String,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub logt_coeff: f64,
    pub quadrature_error: f64,
    pub mu_z: f64,
    pub bessel_mean: f64,
    pub full_range: StableExponent,
}

pub fn constants_report(f: &FunctionalSpec, mu_z: f64, opts: QuadOptions) -> Result<ConstantsReport> {
    let p = prop_constants_with(f, mu_z, opts)?;
    let l = logt_coefficient_with(f, opts)?;
    let full = full_range_constants(f, mu_z)?;
    Ok(ConstantsReport {
        format: CONSTANTS_FORMAT.to_string(),
        functional: f.key.clone(),
        c1: p.c1,
        c2: p.c2,
        c3: p.c3,
        logt_coeff: l.value,
        quadrature_error: p.quadrature_error + l.error,
        mu_z,
        bessel_mean: expected_bessel_value(f)?.value,
        full_range: full,
    })
}
