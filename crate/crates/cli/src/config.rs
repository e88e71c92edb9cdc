//! Run configuration: a versioned TOML file whose every field has a default.
//! Command-line flags override the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bbm_core::engine::{BarrierSpec, DescendantMode, StepPolicy};
use bbm_core::harness::StatisticMode;
use bbm_core::serde_ext::extended_f64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FORMAT: &str = "bbm-config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Verify,
    Constants,
    Fluctuations,
    StoppingLine,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Verify => "verify",
            CommandKind::Constants => "constants",
            CommandKind::Fluctuations => "fluctuations",
            CommandKind::StoppingLine => "stopping-line",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub format: String,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub simulate: Simulate,
    pub verify: Verify,
    pub fluctuations: Fluctuations,
    pub constants: Constants,
    pub stopping_line: StoppingLine,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            format: CONFIG_FORMAT.to_string(),
            seed: 1,
            workers: 0,
            out: PathBuf::from("bbm-out"),
            simulate: Simulate::default(),
            verify: Verify::default(),
            fluctuations: Fluctuations::default(),
            constants: Constants::default(),
            stopping_line: StoppingLine::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulate {
    pub horizon: f64,
    pub dt: f64,
    pub start: f64,
    pub reps: u64,
    pub snapshots: Vec<f64>,
    pub offspring: Vec<f64>,
    pub sigma: f64,
    pub drift: f64,
    #[serde(with = "extended_f64")]
    pub prune_ceiling: f64,
    pub descendants: DescendantMode,
    pub step_policy: StepPolicy,
    pub stop_on_floor_hit: bool,
    pub max_particles: usize,
    pub dump_snapshots: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
}

impl Default for Simulate {
    fn default() -> Self {
        Simulate {
            horizon: 10.0,
            dt: 1e-2,
            start: 0.0,
            reps: 1,
            snapshots: Vec::new(),
            offspring: vec![0.0, 0.0, 1.0],
            sigma: 1.0,
            drift: 1.0,
            prune_ceiling: 40.0,
            descendants: DescendantMode::Freeze,
            step_policy: StepPolicy::Fixed,
            stop_on_floor_hit: false,
            max_particles: 5_000_000,
            dump_snapshots: true,
            barrier: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Verify {
    pub suites: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub dt: f64,
}

impl Default for Verify {
    fn default() -> Self {
        Verify {
            suites: Vec::new(),
            reps: None,
            t: None,
            dt: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fluctuations {
    pub mode: StatisticMode,
    pub functional: String,
    pub t: f64,
    pub proxy_offset: f64,
    pub reps: u64,
    pub dt: f64,
    #[serde(with = "extended_f64")]
    pub prune_ceiling: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
}

impl Default for Fluctuations {
    fn default() -> Self {
        Fluctuations {
            mode: StatisticMode::AdditiveCauchy,
            functional: "one".to_string(),
            t: 20.0,
            proxy_offset: 5.0,
            reps: 2000,
            dt: 1e-2,
            prune_ceiling: 40.0,
            budget_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub functionals: Vec<String>,
    pub mu_z: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            functionals: vec!["one".to_string(), "inv_x".to_string()],
            mu_z: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingLine {
    pub start: f64,
    pub level: f64,
    pub horizon: f64,
    pub window_from: f64,
    #[serde(with = "extended_f64")]
    pub window_to: f64,
    pub prune_ceiling: f64,
    pub dt: f64,
    pub step_policy: StepPolicy,
    pub reps: u64,
}

impl Default for StoppingLine {
    fn default() -> Self {
        StoppingLine {
            start: 1.0,
            level: 0.0,
            horizon: 10.0,
            window_from: 0.0,
            window_to: f64::INFINITY,
            prune_ceiling: 10.0,
            dt: 1e-2,
            step_policy: StepPolicy::Adaptive,
            reps: 10_000,
        }
    }
}

/// Dotted key, meaning and symbol of every field. Defaults are rendered from
/// [`Config::default`] so the help text cannot drift from the code.
pub const FIELDS: &[(&str, &str)] = &[
    ("format", "file format tag; must be bbm-config/1"),
    ("seed", "master seed; every replicate stream derives from it"),
    ("workers", "worker threads; 0 uses every core, 1 runs sequentially"),
    ("out", "output directory"),
    ("simulate.horizon", "final time of each run"),
    ("simulate.dt", "time step near active barriers (dt)"),
    ("simulate.start", "initial position (x)"),
    ("simulate.reps", "number of independent replicates"),
    ("simulate.snapshots", "census times; empty means the horizon only"),
    ("simulate.offspring", "offspring law as probabilities of 0, 1, 2, ... children (L)"),
    ("simulate.sigma", "diffusion coefficient (σ)"),
    ("simulate.drift", "drift per unit time (ρ)"),
    ("simulate.prune_ceiling", "height above which particles are dropped (x_max); inf disables"),
    ("simulate.descendants", "fate of killed particles: freeze or continue-tagged"),
    ("simulate.step_policy", "fixed or adaptive stepping near barriers"),
    ("simulate.stop_on_floor_hit", "end the run at the first floor crossing"),
    ("simulate.max_particles", "population budget; exceeding it is a resource error"),
    ("simulate.dump_snapshots", "write binary population dumps"),
    ("simulate.barrier.level", "killing barrier level (γ); -inf for none"),
    ("simulate.barrier.t_start", "start of the killing window"),
    ("simulate.barrier.t_end", "end of the killing window; inf for open-ended"),
    ("simulate.barrier.floor", "absorbing floor (-M), optional"),
    ("verify.suites", "suites to run; empty runs all of them"),
    ("verify.reps", "replicate count for every suite; unset keeps each suite's own"),
    ("verify.t", "observation time for time-indexed suites; unset keeps each suite's own"),
    ("verify.dt", "time step used by the suites (dt)"),
    ("fluctuations.mode", "additive-cauchy or general-f"),
    ("fluctuations.functional", "functional key for general-f (F)"),
    ("fluctuations.t", "observation time (t)"),
    ("fluctuations.proxy_offset", "T - t, where Z_T stands in for Z_∞"),
    ("fluctuations.reps", "ensemble size"),
    ("fluctuations.dt", "time step (dt)"),
    ("fluctuations.prune_ceiling", "pruning height (x_max); inf disables"),
    ("fluctuations.budget_seconds", "wall-clock budget; later replicates are recorded as failed"),
    ("constants.functionals", "functional keys to tabulate (F)"),
    ("constants.mu_z", "location constant of Z_∞ (μ_Z)"),
    ("stopping_line.start", "initial position (x)"),
    ("stopping_line.level", "barrier level, active on [0, ∞) (γ)"),
    ("stopping_line.horizon", "final time of each run"),
    ("stopping_line.window_from", "start of the killing-time window for φ"),
    ("stopping_line.window_to", "end of the killing-time window for φ; inf for open-ended"),
    ("stopping_line.prune_ceiling", "pruning height; at least level + 10"),
    ("stopping_line.dt", "time step near the barrier (dt)"),
    ("stopping_line.step_policy", "fixed or adaptive"),
    ("stopping_line.reps", "number of replicates"),
];

fn lookup<'a>(v: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(v, |v, k| v.get(k))
}

/// Reference block appended to `--help`.
pub fn help() -> String {
    let defaults = toml::Value::try_from(Config::default()).expect("default config serializes");
    let mut s = String::from("Configuration file (TOML, every field optional):\n");
    let mut section = "";
    for (key, doc) in FIELDS {
        let head = key.rsplit_once('.').map_or("", |(h, _)| h);
        if head != section {
            let _ = writeln!(s, "\n  [{head}]");
            section = head;
        }
        let value = lookup(&defaults, key).map_or_else(|| "unset".to_string(), |v| v.to_string());
        let leaf = key.rsplit('.').next().unwrap_or(key);
        let _ = writeln!(s, "    {leaf} = {value}\n        {doc}");
    }
    s.push_str("\nFlags override the file. --workers falls back to BBM_LAB_WORKERS.\n");
    s.push_str("Exit codes: 0 pass, 1 check failure, 2 usage error, 3 resource error.\n");
    s
}

/// Flag values; `None` keeps the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<u64>,
    pub t: Option<f64>,
    pub out: Option<PathBuf>,
    pub suites: Option<Vec<String>>,
    pub workers: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.format != CONFIG_FORMAT {
            return Err(CliError::Usage(format!(
                "config: unsupported format `{}` (expected {CONFIG_FORMAT})",
                cfg.format
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, cmd: CommandKind, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(r) = o.reps {
            match cmd {
                CommandKind::Simulate => self.simulate.reps = r,
                CommandKind::Verify => self.verify.reps = Some(r),
                CommandKind::Fluctuations => self.fluctuations.reps = r,
                CommandKind::StoppingLine => self.stopping_line.reps = r,
                CommandKind::Constants => return Err(not_applicable("--reps", cmd)),
            }
        }
        if let Some(t) = o.t {
            match cmd {
                CommandKind::Simulate => self.simulate.horizon = t,
                CommandKind::Verify => self.verify.t = Some(t),
                CommandKind::Fluctuations => self.fluctuations.t = t,
                CommandKind::StoppingLine => self.stopping_line.horizon = t,
                CommandKind::Constants => return Err(not_applicable("--t", cmd)),
            }
        }
        if let Some(s) = &o.suites {
            if cmd != CommandKind::Verify {
                return Err(not_applicable("--suite", cmd));
            }
            self.verify.suites = s.clone();
        }
        Ok(())
    }

    /// Field-level checks for the sections `cmd` reads.
    pub fn validate(&self, cmd: CommandKind) -> Result<(), CliError> {
        match cmd {
            CommandKind::Simulate => {
                let s = &self.simulate;
                positive("simulate.dt", s.dt)?;
                non_negative("simulate.horizon", s.horizon)?;
                finite("simulate.start", s.start)?;
                positive("simulate.sigma", s.sigma)?;
                finite("simulate.drift", s.drift)?;
                at_least_one("simulate.reps", s.reps)?;
                if s.prune_ceiling.is_nan() {
                    return Err(field("simulate.prune_ceiling", "must be a number or inf"));
                }
                for &t in &s.snapshots {
                    if !(0.0..=s.horizon).contains(&t) {
                        return Err(field("simulate.snapshots", format!("time {t} outside [0, {}]", s.horizon)));
                    }
                }
            }
            CommandKind::Verify => {
                positive("verify.dt", self.verify.dt)?;
                if let Some(r) = self.verify.reps {
                    at_least_one("verify.reps", r)?;
                }
                if let Some(t) = self.verify.t {
                    positive("verify.t", t)?;
                }
            }
            CommandKind::Fluctuations => {
                let f = &self.fluctuations;
                positive("fluctuations.t", f.t)?;
                positive("fluctuations.proxy_offset", f.proxy_offset)?;
                positive("fluctuations.dt", f.dt)?;
                at_least_one("fluctuations.reps", f.reps)?;
                if let Some(b) = f.budget_seconds {
                    positive("fluctuations.budget_seconds", b)?;
                }
            }
            CommandKind::Constants => {
                finite("constants.mu_z", self.constants.mu_z)?;
                if self.constants.functionals.is_empty() {
                    return Err(field("constants.functionals", "must name at least one functional"));
                }
            }
            CommandKind::StoppingLine => {
                let s = &self.stopping_line;
                finite("stopping_line.level", s.level)?;
                if !(s.start > s.level && s.start.is_finite()) {
                    return Err(field("stopping_line.start", "must lie above the barrier level"));
                }
                positive("stopping_line.horizon", s.horizon)?;
                positive("stopping_line.dt", s.dt)?;
                at_least_one("stopping_line.reps", s.reps)?;
                if !(s.window_from >= 0.0 && s.window_from.is_finite()) {
                    return Err(field("stopping_line.window_from", "must be finite and non-negative"));
                }
                if !(s.window_to > s.window_from) {
                    return Err(field("stopping_line.window_to", "must exceed window_from"));
                }
                if !(s.prune_ceiling >= s.level + 10.0) {
                    return Err(field("stopping_line.prune_ceiling", "must be at least level + 10"));
                }
            }
        }
        Ok(())
    }
}

fn not_applicable(flag: &str, cmd: CommandKind) -> CliError {
    CliError::Usage(format!("{flag} does not apply to `{}`", cmd.name()))
}

fn field(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid value for `{name}`: {reason}"))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be finite and non-negative, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be finite, got {v}")))
    }
}

fn at_least_one(name: &str, v: u64) -> Result<(), CliError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(field(name, "must be at least 1"))
    }
}
