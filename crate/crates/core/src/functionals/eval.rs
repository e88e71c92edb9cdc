//! Particle sums over a population snapshot.

use serde::{Deserialize, Serialize};

use super::{expected_bessel_value, FunctionalSpec};
use crate::engine::{BarrierSpec, Evolution, PopulationSnapshot, SnapshotEntry};
use crate::error::{Error, Result};

/// A functional value together with the parameters it was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub value: f64,
    pub shift: f64,
    pub scale_time: f64,
    pub census_time: f64,
}

/// `W_t = Σ e^{-X_u(t)}`
pub fn eval_additive(snap: &PopulationSnapshot) -> f64 {
    snap.particles.iter().map(|p| (-p.position).exp()).sum()
}

/// `Z_t = Σ X_u(t) e^{-X_u(t)}`
pub fn eval_derivative(snap: &PopulationSnapshot) -> f64 {
    snap.particles.iter().map(|p| p.position * (-p.position).exp()).sum()
}

/// `Σ X² e^{-X}`
pub fn eval_second_moment(snap: &PopulationSnapshot) -> f64 {
    snap.particles.iter().map(|p| p.position * p.position * (-p.position).exp()).sum()
}

#[inline]
fn gibbs_term(f: &FunctionalSpec, p: &SnapshotEntry, shift: f64, root: f64) -> Result<f64> {
    let y = p.position - shift;
    if y <= 0.0 {
        return Ok(0.0);
    }
    let fv = f.value(y / root);
    let term = y * (-p.position).exp() * fv;
    if !term.is_finite() {
        return Err(Error::NonFiniteFunctional {
            functional: f.key.clone(),
            particle: p.id,
            argument: y / root,
        });
    }
    Ok(term)
}

fn gibbs_sum<'a>(
    particles: impl Iterator<Item = &'a SnapshotEntry>,
    f: &FunctionalSpec,
    shift: f64,
    scale_t: f64,
) -> Result<f64> {
    if !(scale_t > 0.0) {
        return Err(Error::param("scale_t", format!("must be positive, got {scale_t}")));
    }
    let root = scale_t.sqrt();
    let mut s = 0.0;
    for p in particles {
        s += gibbs_term(f, p, shift, root)?;
    }
    Ok(s)
}

/// `Z_t(F, Δ, t_s) = Σ (X_u - Δ)_+ e^{-X_u} F((X_u - Δ)/√t_s)`
pub fn eval_gibbs(snap: &PopulationSnapshot, f: &FunctionalSpec, shift: f64, scale_t: f64) -> Result<FunctionalValue> {
    Ok(FunctionalValue {
        value: gibbs_sum(snap.particles.iter(), f, shift, scale_t)?,
        shift,
        scale_time: scale_t,
        census_time: snap.time,
    })
}

fn check_barrier(ev: &Evolution, window: (f64, f64), gamma: f64) -> Result<BarrierSpec> {
    let b = ev
        .barrier
        .filter(|b| b.has_killing())
        .ok_or_else(|| Error::BarrierMismatch("run had no killing barrier".into()))?;
    if b.level != gamma || b.t_start != window.0 || b.t_end != window.1 {
        return Err(Error::BarrierMismatch(format!(
            "run barrier {} on [{}, {}] differs from requested {} on [{}, {}]",
            b.level, b.t_start, b.t_end, gamma, window.0, window.1
        )));
    }
    Ok(b)
}

/// Gibbs sum restricted to lineages never killed by the barrier on `window`.
pub fn eval_killed(
    ev: &Evolution,
    census_time: f64,
    f: &FunctionalSpec,
    shift: f64,
    scale_t: f64,
    window: (f64, f64),
    gamma: f64,
) -> Result<FunctionalValue> {
    check_barrier(ev, window, gamma)?;
    let snap = ev.snapshot_at(census_time)?;
    Ok(FunctionalValue {
        value: gibbs_sum(snap.particles.iter().filter(|p| p.tag.is_none()), f, shift, scale_t)?,
        shift,
        scale_time: scale_t,
        census_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub record: u64,
    pub killing_time: f64,
    pub value: f64,
}

/// Progeny contributions
/// `Ω^{(u)} = Σ_{v ≥ u} (X_v - γ)_+ e^{-X_v} (F((X_v - γ)/√t_s) - E[F(R₁)])`,
/// one per stopping-line record in order of killing.
pub fn eval_contributions(
    ev: &Evolution,
    census_time: f64,
    f: &FunctionalSpec,
    gamma: f64,
    scale_t: f64,
) -> Result<Vec<Contribution>> {
    if !ev.has_lineage_tags() {
        return Err(Error::MissingLineageTags);
    }
    let snap = ev.snapshot_at(census_time)?;
    let mean = expected_bessel_value(f)?.value;
    let centred = f.affine(1.0, -mean);
    contributions_with(ev, snap, &centred, gamma, scale_t)
}

fn contributions_with(
    ev: &Evolution,
    snap: &PopulationSnapshot,
    centred: &FunctionalSpec,
    gamma: f64,
    scale_t: f64,
) -> Result<Vec<Contribution>> {
    let mut out: Vec<Contribution> = ev
        .stopping_line
        .iter()
        .map(|r| Contribution {
            record: r.id,
            killing_time: r.time,
            value: 0.0,
        })
        .collect();
    // Records are appended in processing order; index them by id.
    let mut index: Vec<(u64, usize)> = out.iter().enumerate().map(|(i, c)| (c.record, i)).collect();
    index.sort_unstable();
    let root = scale_t.sqrt();
    for p in &snap.particles {
        if let Some(tag) = p.tag {
            let i = index
                .binary_search_by_key(&tag, |e| e.0)
                .map_err(|_| Error::MissingLineageTags)?;
            out[index[i].1].value += gibbs_term(centred, p, gamma, root)?;
        }
    }
    Ok(out)
}

/// Terms of the path decomposition
/// `Z_t(F,γ) = E[F(R₁)] Z_t(1,γ) + Z̃_t(F - E[F(R₁)], γ) + Σ_u Ω^{(u)}_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub z_f: f64,
    pub mean_times_z_one: f64,
    pub z_killed_centred: f64,
    pub contributions: f64,
    pub residual: f64,
    /// Largest absolute summand, for judging the residual.
    pub scale: f64,
}

pub fn decomposition(ev: &Evolution, census_time: f64, f: &FunctionalSpec, gamma: f64, scale_t: f64) -> Result<Decomposition> {
    if !ev.has_lineage_tags() {
        return Err(Error::MissingLineageTags);
    }
    let b = ev
        .barrier
        .ok_or_else(|| Error::BarrierMismatch("run had no killing barrier".into()))?;
    let snap = ev.snapshot_at(census_time)?;
    let mean = expected_bessel_value(f)?.value;
    let centred = f.affine(1.0, -mean);
    let z_f = eval_gibbs(snap, f, gamma, scale_t)?.value;
    let z_one = eval_gibbs(snap, &FunctionalSpec::one(), gamma, scale_t)?.value;
    let z_killed = eval_killed(ev, census_time, &centred, gamma, scale_t, (b.t_start, b.t_end), gamma)?.value;
    let omegas: f64 = contributions_with(ev, snap, &centred, gamma, scale_t)?
        .iter()
        .map(|c| c.value)
        .sum();
    let residual = z_f - mean * z_one - z_killed - omegas;
    let scale = [z_f.abs(), (mean * z_one).abs(), z_killed.abs(), omegas.abs()]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Decomposition {
        z_f,
        mean_times_z_one: mean * z_one,
        z_killed_centred: z_killed,
        contributions: omegas,
        residual,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{evolve, DescendantMode, EngineConfig};

    fn snap(xs: &[f64]) -> PopulationSnapshot {
        PopulationSnapshot {
            time: 1.0,
            particles: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| SnapshotEntry { id: i as u64, position: x, tag: None })
                .collect(),
        }
    }

    #[test]
    fn additive_and_derivative_sums() {
        assert_eq!(eval_additive(&snap(&[0.0])), 1.0);
        assert!((eval_additive(&snap(&[0.0, 2f64.ln()])) - 1.5).abs() < 1e-15);
        assert_eq!(eval_derivative(&snap(&[0.0])), 0.0);
        assert!((eval_derivative(&snap(&[1.0])) - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn gibbs_special_cases() {
        let s = snap(&[0.3, 1.2, 2.5, 4.0]);
        let one = eval_gibbs(&s, &FunctionalSpec::one(), 0.0, 7.0).unwrap().value;
        assert!((one - eval_derivative(&s)).abs() < 1e-15);
        assert_eq!(one, eval_gibbs(&s, &FunctionalSpec::one(), 0.0, 0.1).unwrap().value);

        let t: f64 = 9.0;
        let inv = FunctionalSpec::power(-1.0);
        let g = eval_gibbs(&s, &inv, 0.0, t).unwrap().value;
        assert!((g - t.sqrt() * eval_additive(&s)).abs() < 1e-14);
        // Shift invariance below every position.
        let g1 = eval_gibbs(&s, &inv, 0.05, t).unwrap().value;
        let g2 = eval_gibbs(&s, &inv, 0.2, t).unwrap().value;
        assert!((g1 - g2).abs() < 1e-14 && (g - g1).abs() < 1e-14);
    }

    #[test]
    fn gibbs_ignores_non_positive_arguments() {
        let s = snap(&[-1.0, 0.0, 1.0]);
        let v = eval_gibbs(&s, &FunctionalSpec::power(-1.5), 0.0, 1.0).unwrap().value;
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_term_names_particle() {
        let s = snap(&[0.5, 800.0]);
        let f = FunctionalSpec::exp(2.0);
        match eval_gibbs(&s, &f, 0.0, 1.0) {
            Err(Error::NonFiniteFunctional { particle, .. }) => assert_eq!(particle, 1),
            other => panic!("{other:?}"),
        }
    }

    fn tagged_run(seed: u64) -> Evolution {
        let mut cfg = EngineConfig::new(6.0);
        cfg.seed = seed;
        cfg.barrier = Some(BarrierSpec::killing(1.0, 2.0, 6.0));
        cfg.descendants = DescendantMode::ContinueTagged;
        evolve(&cfg).unwrap()
    }

    #[test]
    fn killed_sum_checks_barrier() {
        let ev = tagged_run(1);
        let f = FunctionalSpec::power(1.0);
        assert!(eval_killed(&ev, 6.0, &f, 1.0, 6.0, (2.0, 6.0), 1.0).is_ok());
        assert!(matches!(
            eval_killed(&ev, 6.0, &f, 1.0, 6.0, (2.0, 6.0), 0.5),
            Err(Error::BarrierMismatch(_))
        ));
    }

    #[test]
    fn contributions_need_tags() {
        let mut cfg = EngineConfig::new(4.0);
        cfg.barrier = Some(BarrierSpec::killing(0.5, 1.0, 4.0));
        let ev = evolve(&cfg).unwrap();
        assert!(matches!(
            eval_contributions(&ev, 4.0, &FunctionalSpec::one(), 0.5, 4.0),
            Err(Error::MissingLineageTags)
        ));
    }

    #[test]
    fn decomposition_closes() {
        for seed in 0..20 {
            let ev = tagged_run(seed);
            let d = decomposition(&ev, 6.0, &FunctionalSpec::exp(-1.0), 1.0, 6.0).unwrap();
            assert!(d.residual.abs() < 1e-12 * d.scale.max(1.0), "{d:?}");
            let c = eval_contributions(&ev, 6.0, &FunctionalSpec::exp(-1.0), 1.0, 6.0).unwrap();
            assert_eq!(c.len(), ev.stopping_line.len());
        }
    }
}
