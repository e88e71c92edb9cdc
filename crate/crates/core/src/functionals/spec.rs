use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext::extended_f64;

/// One piece `Σ_k c_k x^k · e^{rate·x}` of a custom functional, valid on
/// `[from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(default)]
    pub from: f64,
    #[serde(with = "extended_f64", default = "infinity")]
    pub to: f64,
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub rate: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl Piece {
    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
    }

    fn deriv_coeffs(c: &[f64]) -> Vec<f64> {
        c.iter().enumerate().skip(1).map(|(k, ck)| k as f64 * ck).collect()
    }

    fn value(&self, x: f64) -> f64 {
        Self::poly(&self.coeffs, x) * (self.rate * x).exp()
    }

    // (P e^{rx})' = (P' + rP) e^{rx}
    fn derived(&self) -> Piece {
        let dp = Self::deriv_coeffs(&self.coeffs);
        let n = self.coeffs.len().max(dp.len());
        let coeffs = (0..n)
            .map(|k| dp.get(k).copied().unwrap_or(0.0) + self.rate * self.coeffs.get(k).copied().unwrap_or(0.0))
            .collect();
        Piece {
            from: self.from,
            to: self.to,
            coeffs,
            rate: self.rate,
        }
    }
}

/// Shape of a test function `F: (0, ∞) → ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    One,
    /// `x^p`; negative `p` gives the divergent class `x^{-α}`.
    Power { exponent: f64 },
    /// `e^{θx}`
    Exp { theta: f64 },
    Piecewise { pieces: Vec<Piece> },
    /// `Σ a_i F_i`
    Linear { terms: Vec<(f64, FunctionalSpec)> },
}

/// Assumption classes a functional is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssumptionFlags {
    /// `|F(x)| ≤ C e^{κx}`
    pub a1: bool,
    /// `|F(x) - F(y)| ≤ C (x - y) e^{κx}` for `x ≥ y`
    pub a2: bool,
    /// `|F(x)| ≤ C x^{-α} e^{κx}`
    pub h1: bool,
    /// `|F'(x)| ≤ C x^{-α-1} e^{κx}`
    pub h2: bool,
    /// `|F''(x)| ≤ C x^{-α-2} e^{κx}`
    pub h3: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub key: String,
    pub shape: Shape,
    /// Divergence exponent at the origin.
    #[serde(default)]
    pub alpha: f64,
    /// Exponential growth constant.
    #[serde(default = "one")]
    pub kappa: f64,
    /// Multiplicative constant in the growth bounds.
    #[serde(default = "one")]
    pub bound_constant: f64,
    #[serde(default)]
    pub flags: AssumptionFlags,
}

fn one() -> f64 {
    1.0
}

/// Bound violation found while sampling a declared assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagViolation {
    pub flag: String,
    pub x: f64,
    pub y: Option<f64>,
    pub lhs: f64,
    pub bound: f64,
}

pub const CATALOG_KEYS: &[&str] = &[
    "one", "x", "x2", "exp_neg", "exp_half", "inv_sqrt", "inv_x", "inv_x3_2", "bessel_g",
];

impl FunctionalSpec {
    fn new(key: &str, shape: Shape, alpha: f64, kappa: f64, c: f64, flags: AssumptionFlags) -> Self {
        FunctionalSpec {
            key: key.to_string(),
            shape,
            alpha,
            kappa,
            bound_constant: c,
            flags,
        }
    }

    fn all_flags() -> AssumptionFlags {
        AssumptionFlags {
            a1: true,
            a2: true,
            h1: true,
            h2: true,
            h3: true,
        }
    }

    fn h_flags() -> AssumptionFlags {
        AssumptionFlags {
            a1: false,
            a2: false,
            h1: true,
            h2: true,
            h3: true,
        }
    }

    pub fn one() -> Self {
        Self::new("one", Shape::One, 0.0, 1.0, 1.0, Self::all_flags())
    }

    /// `x^p`. Negative exponents are tagged with `α = -p` and the H class only.
    pub fn power(p: f64) -> Self {
        let key = match p {
            p if p == 1.0 => "x".to_string(),
            p if p == 2.0 => "x2".to_string(),
            p if p == -0.5 => "inv_sqrt".to_string(),
            p if p == -1.0 => "inv_x".to_string(),
            p if p == -1.5 => "inv_x3_2".to_string(),
            p => format!("pow:{p}"),
        };
        if p >= 0.0 {
            // x^p ≤ (p/e)^p e^x, and the derivatives pick up p and p(p-1).
            let growth = if p == 0.0 { 1.0 } else { (p / std::f64::consts::E).powf(p).max(1.0) };
            let c = growth * p.max(1.0).max((p * (p - 1.0)).abs());
            let mut flags = Self::all_flags();
            // Unbounded slope at the origin.
            flags.a2 = p == 0.0 || p >= 1.0;
            Self::new(&key, Shape::Power { exponent: p }, 0.0, 1.0, c, flags)
        } else {
            let alpha = -p;
            Self::new(&key, Shape::Power { exponent: p }, alpha, 1.0, (alpha * (alpha + 1.0)).max(1.0), Self::h_flags())
        }
    }

    pub fn exp(theta: f64) -> Self {
        let key = match theta {
            t if t == -1.0 => "exp_neg".to_string(),
            t if t == 0.5 => "exp_half".to_string(),
            t => format!("exp:{t}"),
        };
        let kappa = theta.abs().max(1.0) + if theta > 0.0 { 0.5 } else { 0.0 };
        let c = 3.0 * theta.abs().max(1.0).powi(2);
        Self::new(&key, Shape::Exp { theta }, 0.0, kappa, c, Self::all_flags())
    }

    pub fn piecewise(key: &str, pieces: Vec<Piece>, alpha: f64, kappa: f64, bound_constant: f64, flags: AssumptionFlags) -> Self {
        Self::new(key, Shape::Piecewise { pieces }, alpha, kappa, bound_constant, flags)
    }

    /// `Σ a_i F_i`, with bounds and class inherited conservatively.
    pub fn linear(terms: Vec<(f64, FunctionalSpec)>) -> Self {
        let key = terms
            .iter()
            .map(|(a, f)| format!("{a}*{}", f.key))
            .collect::<Vec<_>>()
            .join("+");
        let alpha = terms.iter().map(|(_, f)| f.alpha).fold(0.0, f64::max);
        let kappa = terms.iter().map(|(_, f)| f.kappa).fold(1.0, f64::max);
        let c = terms.iter().map(|(a, f)| a.abs() * f.bound_constant).sum::<f64>().max(1.0);
        let mut flags = Self::all_flags();
        for (_, f) in &terms {
            flags.a1 &= f.flags.a1;
            flags.a2 &= f.flags.a2;
            flags.h1 &= f.flags.h1;
            flags.h2 &= f.flags.h2;
            flags.h3 &= f.flags.h3;
        }
        Self::new(&key, Shape::Linear { terms }, alpha, kappa, c, flags)
    }

    /// `a F + b`, used for centred functionals such as `F - E[F(R₁)]`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self::linear(vec![(a, self.clone()), (b, Self::one())])
    }

    /// Looks up a catalog key, or a parametric key `exp:θ`, `pow:p`.
    pub fn from_key(key: &str) -> Result<Self> {
        let k = key.trim();
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::UnknownFunctional(key.to_string()));
        Ok(match k {
            "one" => Self::one(),
            "x" => Self::power(1.0),
            "x2" => Self::power(2.0),
            "exp_neg" => Self::exp(-1.0),
            "exp_half" => Self::exp(0.5),
            "inv_sqrt" => Self::power(-0.5),
            "inv_x" => Self::power(-1.0),
            "inv_x3_2" => Self::power(-1.5),
            // Second-order Bessel correction of x², i.e. x² - 3.
            "bessel_g" => Self::piecewise(
                "bessel_g",
                vec![Piece {
                    from: 0.0,
                    to: f64::INFINITY,
                    coeffs: vec![-3.0, 0.0, 1.0],
                    rate: 0.0,
                }],
                0.0,
                1.0,
                3.0,
                Self::all_flags(),
            ),
            _ => {
                if let Some(t) = k.strip_prefix("exp:") {
                    Self::exp(parse(t)?)
                } else if let Some(p) = k.strip_prefix("pow:") {
                    Self::power(parse(p)?)
                } else {
                    return Err(Error::UnknownFunctional(key.to_string()));
                }
            }
        })
    }

    pub fn catalog() -> Vec<Self> {
        CATALOG_KEYS.iter().map(|k| Self::from_key(k).expect("catalog key")).collect()
    }

    /// `F(x)`.
    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::One => 1.0,
            Shape::Power { exponent } => x.powf(*exponent),
            Shape::Exp { theta } => (theta * x).exp(),
            Shape::Piecewise { pieces } => pieces
                .iter()
                .find(|p| x >= p.from && x < p.to)
                .map_or(0.0, |p| p.value(x)),
            Shape::Linear { terms } => terms.iter().map(|(a, f)| a * f.value(x)).sum(),
        }
    }

    /// `F'(x)`; every built-in shape is differentiable in closed form.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        Some(match &self.shape {
            Shape::One => 0.0,
            Shape::Power { exponent } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    exponent * x.powf(exponent - 1.0)
                }
            }
            Shape::Exp { theta } => theta * (theta * x).exp(),
            Shape::Piecewise { pieces } => pieces
                .iter()
                .find(|p| x >= p.from && x < p.to)
                .map_or(0.0, |p| p.derived().value(x)),
            Shape::Linear { terms } => {
                let mut s = 0.0;
                for (a, f) in terms {
                    s += a * f.derivative(x)?;
                }
                s
            }
        })
    }

    pub fn second_derivative(&self, x: f64) -> Option<f64> {
        Some(match &self.shape {
            Shape::One => 0.0,
            Shape::Power { exponent: p } => {
                if *p == 0.0 || *p == 1.0 {
                    0.0
                } else {
                    p * (p - 1.0) * x.powf(p - 2.0)
                }
            }
            Shape::Exp { theta } => theta * theta * (theta * x).exp(),
            Shape::Piecewise { pieces } => pieces
                .iter()
                .find(|p| x >= p.from && x < p.to)
                .map_or(0.0, |p| p.derived().derived().value(x)),
            Shape::Linear { terms } => {
                let mut s = 0.0;
                for (a, f) in terms {
                    s += a * f.second_derivative(x)?;
                }
                s
            }
        })
    }

    /// Largest exponential rate in the shape, used to size quadrature ranges.
    pub fn growth_rate(&self) -> f64 {
        match &self.shape {
            Shape::One | Shape::Power { .. } => 0.0,
            Shape::Exp { theta } => *theta,
            Shape::Piecewise { pieces } => pieces.iter().map(|p| p.rate).fold(0.0, f64::max),
            Shape::Linear { terms } => terms.iter().map(|(_, f)| f.growth_rate()).fold(0.0, f64::max),
        }
    }

    /// Homogeneous degree `p` when `F(sx) = s^p F(x)` for all `s, x > 0`.
    pub fn homogeneous_degree(&self) -> Option<f64> {
        match &self.shape {
            Shape::One => Some(0.0),
            Shape::Power { exponent } => Some(*exponent),
            _ => None,
        }
    }

    /// Samples the declared assumption bounds on a log grid over
    /// `[1e-6, 1e2]`. Violations are returned, not raised: the bounds are
    /// sufficient conditions only.
    pub fn check_flags(&self) -> Vec<FlagViolation> {
        let n = 400;
        let grid: Vec<f64> = (0..=n).map(|i| 10f64.powf(-6.0 + 8.0 * i as f64 / n as f64)).collect();
        let c = self.bound_constant;
        let k = self.kappa;
        let a = self.alpha;
        let mut out = Vec::new();
        let mut check = |flag: &str, x: f64, y: Option<f64>, lhs: f64, bound: f64| {
            if !(lhs <= bound * (1.0 + 1e-12)) {
                out.push(FlagViolation {
                    flag: flag.to_string(),
                    x,
                    y,
                    lhs,
                    bound,
                });
            }
        };
        for (i, &x) in grid.iter().enumerate() {
            let e = (k * x).exp();
            let f = self.value(x);
            if self.flags.a1 {
                check("A1", x, None, f.abs(), c * e);
            }
            if self.flags.a2 {
                for &y in grid[..i].iter().step_by(37).chain(i.checked_sub(1).map(|j| &grid[j])) {
                    check("A2", x, Some(y), (f - self.value(y)).abs(), c * (x - y) * e);
                }
            }
            if self.flags.h1 {
                check("H1", x, None, f.abs(), c * x.powf(-a) * e);
            }
            if self.flags.h2 {
                if let Some(d) = self.derivative(x) {
                    check("H2", x, None, d.abs(), c * x.powf(-a - 1.0) * e);
                }
            }
            if self.flags.h3 {
                if let Some(d) = self.second_derivative(x) {
                    check("H3", x, None, d.abs(), c * x.powf(-a - 2.0) * e);
                }
            }
        }
        out
    }
}
