use serde::{Deserialize, Serialize};

use crate::engine::Evolution;
use crate::error::{Error, Result};
use crate::kernels::{first_passage_cdf, INV_SQRT_2PI};
use crate::quad::{integrate, Tolerance};
use crate::serde_ext::extended_f64;
use crate::stats::mean_se;

/// Indicator of a killing-time window `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from: f64,
    #[serde(with = "extended_f64")]
    pub to: f64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        from: 0.0,
        to: f64::INFINITY,
    };

    pub fn after(s: f64) -> Self {
        TimeWindow {
            from: s,
            to: f64::INFINITY,
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.from && r < self.to
    }

    /// `P(s0 + τ_h ∈ [from, to))`.
    pub fn passage_probability(&self, s0: f64, h: f64) -> f64 {
        let cdf = |r: f64| if r <= 0.0 { 0.0 } else { first_passage_cdf(h, r) };
        (cdf(self.to - s0) - cdf(self.from - s0)).max(0.0)
    }
}

/// `x e^{-x} ∫₀^∞ φ(r) e^{-x²/2r} (2π)^{-1/2} r^{-3/2} dr`, with `φ` smooth
/// between the listed breakpoints. Integrated in `q = x/√r`, which is
/// half-normal under the passage-time law.
pub fn stopping_line_closed_form(x: f64, phi: impl Fn(f64) -> f64, breakpoints: &[f64]) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::param("x", format!("start must lie above the barrier, got {x}")));
    }
    let tol = Tolerance::new(1e-15, 1e-12);
    let q_max = 40.0;
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .filter(|b| **b > 0.0 && b.is_finite())
        .map(|b| x / b.sqrt())
        .filter(|q| *q < q_max)
        .collect();
    cuts.push(q_max);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let g = |q: f64| {
        if q <= 0.0 {
            return 0.0;
        }
        2.0 * INV_SQRT_2PI * (-0.5 * q * q).exp() * phi(x * x / (q * q))
    };
    let mut total = 0.0;
    let mut lo = 0.0;
    for &c in &cuts {
        total += integrate(g, lo, c, tol)?.value;
        lo = c;
    }
    Ok((-x).exp() * total)
}

/// Per-replicate `Σ_{u∈𝓛} φ(T_u)`, plus the exact conditional expectation of
/// the part the run could not observe: particles alive at the horizon or
/// pruned at height `h` above the barrier still produce `e^{-h}` expected
/// crossings, at times `s0 + τ_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingLineSum {
    pub observed: f64,
    pub compensator: f64,
    pub total: f64,
    pub kills: usize,
}

pub fn stopping_line_sum(ev: &Evolution, window: TimeWindow) -> Result<StoppingLineSum> {
    let b = match &ev.barrier {
        Some(b) if b.has_killing() => *b,
        _ => return Err(Error::BarrierMismatch("run had no killing barrier".into())),
    };
    if b.t_start != 0.0 || b.t_end.is_finite() {
        return Err(Error::BarrierMismatch("moment check needs a barrier active on [0, ∞)".into()));
    }
    let observed = ev.stopping_line.iter().filter(|r| window.contains(r.time)).count() as f64;
    let last = ev
        .snapshots
        .iter()
        .max_by(|a, c| a.time.total_cmp(&c.time))
        .ok_or_else(|| Error::param("snapshots", "run must keep a census at its horizon"))?;
    let mut compensator = 0.0;
    for p in last.particles.iter().filter(|p| p.tag.is_none()) {
        let h = p.position - b.level;
        compensator += (-h).exp() * window.passage_probability(last.time, h);
    }
    for p in ev.pruned.iter().filter(|p| p.tag.is_none()) {
        let h = p.position - b.level;
        compensator += (-h).exp() * window.passage_probability(p.time, h);
    }
    Ok(StoppingLineSum {
        observed,
        compensator,
        total: observed + compensator,
        kills: ev.stopping_line.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub mc_mean: f64,
    pub se: f64,
    pub closed_form: f64,
    pub z: f64,
    pub n: usize,
}

/// Monte Carlo mean of per-replicate sums against the closed form.
pub fn stoppingline_moment_check(sums: &[f64], closed_form: f64) -> Result<MomentCheck> {
    if sums.len() < 2 {
        return Err(Error::InsufficientSamples("moment check needs at least two replicates".into()));
    }
    let (m, se) = mean_se(sums);
    Ok(MomentCheck {
        mc_mean: m,
        se,
        closed_form,
        z: if se > 0.0 { (m - closed_form) / se } else { f64::INFINITY },
        n: sums.len(),
    })
}
