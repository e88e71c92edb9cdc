//! Replicate ensembles, fluctuation statistics and the instruments used to
//! compare them with the limit laws.

mod cf;
mod exec;
mod output;
mod stopping;
mod tail;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{evolve, EngineConfig};
use crate::error::{Error, Result};
use crate::functionals::{eval_additive, eval_derivative, eval_gibbs, expected_bessel_value, FunctionalSpec, Shape};
use crate::kernels::SQRT_2_OVER_PI;

pub use cf::{cf_distance, empirical_cf, fit_cauchy_mixture, CauchyMixture, CfDistance, EcfPoint};
pub use exec::{map_replicates, Execution};
pub use output::{read_samples_csv, write_samples_csv, write_verdicts, Verdict, VerdictReport, SAMPLES_FORMAT, VERDICTS_FORMAT};
pub use stopping::{
    stopping_line_closed_form, stopping_line_sum, stoppingline_moment_check, MomentCheck, StoppingLineSum, TimeWindow,
};
pub use tail::{hill_index, HillEstimate, TailSide};

pub const MANIFEST_FORMAT: &str = "bbm-manifest/1";

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticMode {
    /// `√t (√t W_t − √(2/π) Z_T)`
    AdditiveCauchy,
    /// `√t (Z_t(F) − E[F(R₁)] Z_T + (log t)/(2√t) · Z_T · ℓ(F))`, with `ℓ` the
    /// `log t` coefficient of `F`.
    GeneralF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticSpec {
    pub mode: StatisticMode,
    /// Observation time `t`.
    pub t: f64,
    /// Time `T > t` at which `Z_T` stands in for `Z_∞`.
    pub proxy_time: f64,
    #[serde(default = "FunctionalSpec::one")]
    pub functional: FunctionalSpec,
}

impl StatisticSpec {
    pub fn additive(t: f64) -> Self {
        StatisticSpec {
            mode: StatisticMode::AdditiveCauchy,
            t,
            proxy_time: t + 5.0,
            functional: FunctionalSpec::one(),
        }
    }

    pub fn general(t: f64, f: FunctionalSpec) -> Self {
        StatisticSpec {
            mode: StatisticMode::GeneralF,
            t,
            proxy_time: t + 5.0,
            functional: f,
        }
    }

    pub fn formula(&self) -> &'static str {
        match self.mode {
            StatisticMode::AdditiveCauchy => "sqrt(t) * (sqrt(t) * W_t - sqrt(2/pi) * Z_T)",
            StatisticMode::GeneralF => "sqrt(t) * (Z_t(F) - E[F(R_1)] * Z_T + log(t) / (2 sqrt(t)) * Z_T * logt_coeff(F))",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::param("t", format!("must be positive, got {}", self.t)));
        }
        if !(self.proxy_time > self.t && self.proxy_time.is_finite()) {
            return Err(Error::param(
                "proxy_time",
                format!("must exceed t = {}, got {}", self.t, self.proxy_time),
            ));
        }
        if self.mode == StatisticMode::AdditiveCauchy && !matches!(self.functional.shape, Shape::One) {
            return Err(Error::ModeMismatch(format!(
                "additive-cauchy mode takes no functional, got `{}`",
                self.functional.key
            )));
        }
        Ok(())
    }
}

/// Full reproducibility record of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub software_version: String,
    pub engine: EngineConfig,
    pub statistic: StatisticSpec,
    pub formula: String,
    pub seed: u64,
    pub replicates: u64,
    /// Replicates not started once this much wall-clock time has elapsed are
    /// recorded as failures.
    #[serde(default)]
    pub budget_seconds: Option<f64>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(engine: EngineConfig, statistic: StatisticSpec, seed: u64, replicates: u64) -> Self {
        let mut engine = engine;
        engine.seed = seed;
        engine.snapshots = vec![statistic.t, statistic.proxy_time];
        engine.horizon = statistic.proxy_time;
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            formula: statistic.formula().to_string(),
            engine,
            statistic,
            seed,
            replicates,
            budget_seconds: None,
            outputs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format `{}`", self.format)));
        }
        if self.replicates == 0 {
            return Err(Error::param("replicates", "must be positive"));
        }
        self.statistic.validate()?;
        self.engine.validate()?;
        for &s in &[self.statistic.t, self.statistic.proxy_time] {
            if !self.engine.snapshots.contains(&s) {
                return Err(Error::param("snapshots", format!("engine schedule lacks time {s}")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    fn replicate_config(&self, replicate: u64) -> EngineConfig {
        let mut cfg = self.engine.clone();
        cfg.seed = self.seed;
        cfg.replicate = replicate;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSample {
    pub replicate: u64,
    pub t: f64,
    pub proxy_time: f64,
    pub w_t: f64,
    pub z_t: f64,
    /// `Z_t(F)`, equal to `z_t` for `F ≡ 1`.
    pub z_f: f64,
    pub z_proxy: f64,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub manifest_hash: String,
    pub samples: Vec<FluctuationSample>,
    pub failures: Vec<ReplicateFailure>,
    pub requested: u64,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl Ensemble {
    pub fn statistics(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.statistic).collect()
    }

    pub fn net_size(&self) -> usize {
        self.samples.len()
    }
}

/// Constants a statistic needs that depend on `F` but not on the replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticConstants {
    pub bessel_mean: f64,
    pub logt_coeff: f64,
}

impl StatisticConstants {
    pub fn for_spec(spec: &StatisticSpec) -> Result<Self> {
        match spec.mode {
            StatisticMode::AdditiveCauchy => Ok(StatisticConstants {
                bessel_mean: 1.0,
                logt_coeff: -SQRT_2_OVER_PI,
            }),
            StatisticMode::GeneralF => Ok(StatisticConstants {
                bessel_mean: expected_bessel_value(&spec.functional)?.value,
                logt_coeff: crate::constants::logt_coefficient(&spec.functional)?.value,
            }),
        }
    }
}

/// The fluctuation statistic from already evaluated martingale values.
pub fn fluctuation_statistic(
    mode: StatisticMode,
    t: f64,
    w_t: f64,
    z_f: f64,
    z_proxy: f64,
    constants: &StatisticConstants,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    let st = t.sqrt();
    Ok(match mode {
        StatisticMode::AdditiveCauchy => st * (st * w_t - SQRT_2_OVER_PI * z_proxy),
        StatisticMode::GeneralF => {
            st * (z_f - constants.bessel_mean * z_proxy + t.ln() / (2.0 * st) * z_proxy * constants.logt_coeff)
        }
    })
}

/// Runs every replicate of the manifest. Failed replicates are recorded and
/// the ensemble continues; it is an error only if none succeed.
pub fn run_ensemble(manifest: &RunManifest, exec: Execution) -> Result<Ensemble> {
    manifest.validate()?;
    let spec = &manifest.statistic;
    let constants = StatisticConstants::for_spec(spec)?;
    let start = Instant::now();
    let budget = manifest.budget_seconds;
    let outcomes = map_replicates(manifest.replicates, exec, |r| -> std::result::Result<FluctuationSample, String> {
        if let Some(b) = budget {
            if start.elapsed().as_secs_f64() > b {
                return Err(format!("wall-clock budget of {b} s exhausted before start"));
            }
        }
        let ev = evolve(&manifest.replicate_config(r)).map_err(|e| e.to_string())?;
        let snap_t = ev.snapshot_at(spec.t).map_err(|e| e.to_string())?;
        let snap_proxy = ev.snapshot_at(spec.proxy_time).map_err(|e| e.to_string())?;
        let w_t = eval_additive(snap_t);
        let z_t = eval_derivative(snap_t);
        let z_f = match spec.functional.shape {
            Shape::One => z_t,
            _ => eval_gibbs(snap_t, &spec.functional, 0.0, spec.t).map_err(|e| e.to_string())?.value,
        };
        let z_proxy = eval_derivative(snap_proxy);
        let statistic = fluctuation_statistic(spec.mode, spec.t, w_t, z_f, z_proxy, &constants).map_err(|e| e.to_string())?;
        Ok(FluctuationSample {
            replicate: r,
            t: spec.t,
            proxy_time: spec.proxy_time,
            w_t,
            z_t,
            z_f,
            z_proxy,
            statistic,
        })
    })?;
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(s) => samples.push(s),
            Err(reason) => failures.push(ReplicateFailure {
                replicate: r as u64,
                reason,
            }),
        }
    }
    if samples.is_empty() {
        return Err(Error::AllReplicatesFailed(failures.len()));
    }
    Ok(Ensemble {
        manifest_hash: manifest.hash(),
        samples,
        failures,
        requested: manifest.replicates,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> StatisticConstants {
        StatisticConstants::for_spec(&StatisticSpec::additive(4.0)).unwrap()
    }

    #[test]
    fn statistic_vanishes_on_the_limit_relation() {
        let t: f64 = 9.0;
        let z = 1.7;
        let w = SQRT_2_OVER_PI * z / t.sqrt();
        let s = fluctuation_statistic(StatisticMode::AdditiveCauchy, t, w, 0.0, z, &consts()).unwrap();
        assert!(s.abs() < 1e-14);
        let s2 = fluctuation_statistic(StatisticMode::AdditiveCauchy, t, 2.0 * 0.3, 0.0, 2.0 * z, &consts()).unwrap();
        let s1 = fluctuation_statistic(StatisticMode::AdditiveCauchy, t, 0.3, 0.0, z, &consts()).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-12);
    }

    #[test]
    fn general_mode_with_constant_functional_is_derivative_statistic() {
        let spec = StatisticSpec::general(20.0, FunctionalSpec::one());
        let c = StatisticConstants::for_spec(&spec).unwrap();
        assert!((c.logt_coeff + SQRT_2_OVER_PI).abs() < 1e-12);
        let (t, zt, zp) = (20.0f64, 1.3, 1.1);
        let s = fluctuation_statistic(StatisticMode::GeneralF, t, 0.0, zt, zp, &c).unwrap();
        let hand = t.sqrt() * (zt - zp - t.ln() / (2.0 * std::f64::consts::PI * t).sqrt() * zp);
        assert!((s - hand).abs() < 1e-12);
    }

    #[test]
    fn manifest_validation_and_hash() {
        let m = RunManifest::new(EngineConfig::new(1.0), StatisticSpec::additive(2.0), 7, 3);
        m.validate().unwrap();
        assert_eq!(m.engine.horizon, 7.0);
        let back = RunManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back.hash(), m.hash());
        let mut other = m.clone();
        other.seed = 8;
        assert_ne!(other.hash(), m.hash());
        let mut bad = StatisticSpec::additive(2.0);
        bad.functional = FunctionalSpec::power(1.0);
        assert!(matches!(bad.validate(), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn ensemble_is_worker_independent_and_flags_failures() {
        let mut m = RunManifest::new(EngineConfig::new(1.0), StatisticSpec::additive(3.0), 11, 4);
        let a = run_ensemble(&m, Execution::Sequential).unwrap();
        let b = run_ensemble(&m, Execution::Parallel { workers: 3 }).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.net_size(), 4);
        m.engine.max_particles = 20;
        match run_ensemble(&m, Execution::Sequential) {
            Ok(e) => assert!(!e.failures.is_empty() && e.net_size() + e.failures.len() == 4),
            Err(Error::AllReplicatesFailed(n)) => assert_eq!(n, 4),
            Err(e) => panic!("{e}"),
        }
    }
}
