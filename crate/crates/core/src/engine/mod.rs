//! Branching Brownian motion on `[0, T]`.
//!
//! Each particle is simulated to the end of its life before its children are
//! started (depth-first, explicit stack). A particle owns a random stream
//! derived from its parent's stream and its birth order, so the realisation
//! of any lineage is fixed by the seed alone: pruning, freezing or changing
//! the snapshot schedule elsewhere in the tree never changes it.
//!
//! Branching clocks are exact exponentials. Between branch events a particle
//! jumps straight from checkpoint to checkpoint (snapshot times, window
//! boundaries) with exact Gaussian increments, except while a killing barrier
//! or floor is active, when it is advanced in steps of at most `dt` and every
//! step is tested against the Brownian-bridge crossing probability.

mod dump;

pub use dump::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{branch_time, bridge_hit_probability, offspring_count, Diffusion, OffspringLaw};
use crate::rng::{derive_stream, mix64, RngStream};
use crate::serde_ext::extended_f64;

/// Killing barrier at `level` active on `[t_start, t_end]`, and an optional
/// absorbing floor active at all times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    #[serde(with = "extended_f64")]
    pub level: f64,
    pub t_start: f64,
    #[serde(with = "extended_f64")]
    pub t_end: f64,
    #[serde(default)]
    pub floor: Option<f64>,
}

impl BarrierSpec {
    pub fn killing(level: f64, t_start: f64, t_end: f64) -> Self {
        BarrierSpec {
            level,
            t_start,
            t_end,
            floor: None,
        }
    }

    /// Absorbing floor only, no killing barrier.
    pub fn floor_only(floor: f64) -> Self {
        BarrierSpec {
            level: f64::NEG_INFINITY,
            t_start: 0.0,
            t_end: f64::INFINITY,
            floor: Some(floor),
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = Some(floor);
        self
    }

    pub fn has_killing(&self) -> bool {
        self.level.is_finite()
    }

    #[inline]
    fn active_at(&self, t: f64) -> bool {
        self.has_killing() && t >= self.t_start && t < self.t_end
    }

    pub fn validate(&self) -> Result<()> {
        if self.level.is_nan() || self.level == f64::INFINITY {
            return Err(Error::param("barrier.level", "must be finite (or -inf for no barrier)"));
        }
        if !(self.t_start >= 0.0 && self.t_start.is_finite()) {
            return Err(Error::param("barrier.t_start", "must be finite and non-negative"));
        }
        if !(self.t_start <= self.t_end) {
            return Err(Error::param("barrier.t_end", "window must satisfy t_start <= t_end"));
        }
        if let Some(f) = self.floor {
            if !f.is_finite() {
                return Err(Error::param("barrier.floor", "must be finite"));
            }
            if self.has_killing() && f >= self.level {
                return Err(Error::param("barrier.floor", "must lie below the barrier level"));
            }
        }
        Ok(())
    }
}

/// What happens to a particle when it is killed by the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescendantMode {
    /// The particle stops; it has no descendants.
    #[default]
    Freeze,
    /// The particle keeps moving and branching; it and its progeny carry the
    /// id of the stopping-line record as a tag and are no longer tested
    /// against the barrier.
    ContinueTagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// Steps of exactly `dt` (shortened to land on checkpoints).
    #[default]
    Fixed,
    /// Steps of `max(dt, (d / 6)²)` where `d` is the distance to the nearest
    /// active level. Crossing detection stays exact; only the attribution of
    /// a crossing time inside a long step is coarse, and such crossings have
    /// probability below 1e-8 per step.
    Adaptive,
}

fn default_dt() -> f64 {
    1e-2
}
fn default_ceiling() -> Option<f64> {
    Some(40.0)
}
fn default_max_particles() -> usize {
    5_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub law: OffspringLaw,
    #[serde(default)]
    pub diffusion: Diffusion,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub barrier: Option<BarrierSpec>,
    #[serde(default = "default_ceiling")]
    pub prune_ceiling: Option<f64>,
    #[serde(default)]
    pub descendants: DescendantMode,
    #[serde(default)]
    pub step_policy: StepPolicy,
    #[serde(default)]
    pub stop_on_floor_hit: bool,
    #[serde(default = "default_max_particles")]
    pub max_particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Replicate index; selects the root random stream.
    #[serde(default)]
    pub replicate: u64,
}

impl EngineConfig {
    pub fn new(horizon: f64) -> Self {
        EngineConfig {
            dt: default_dt(),
            horizon,
            start: 0.0,
            law: OffspringLaw::binary(),
            diffusion: Diffusion::default(),
            snapshots: vec![horizon],
            barrier: None,
            prune_ceiling: default_ceiling(),
            descendants: DescendantMode::Freeze,
            step_policy: StepPolicy::Fixed,
            stop_on_floor_hit: false,
            max_particles: default_max_particles(),
            seed: 0,
            replicate: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive and finite, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be finite and non-negative, got {}", self.horizon)));
        }
        if !self.start.is_finite() {
            return Err(Error::param("start", "must be finite"));
        }
        self.diffusion.validate()?;
        for &s in &self.snapshots {
            if !(s >= 0.0 && s <= self.horizon) {
                return Err(Error::param("snapshots", format!("time {s} outside [0, {}]", self.horizon)));
            }
        }
        if let Some(b) = &self.barrier {
            b.validate()?;
        }
        if let Some(c) = self.prune_ceiling {
            if c.is_nan() {
                return Err(Error::param("prune_ceiling", "must not be NaN"));
            }
            if let Some(b) = &self.barrier {
                if b.has_killing() && c < b.level + 10.0 {
                    return Err(Error::param(
                        "prune_ceiling",
                        format!("{c} must exceed the barrier level {} by at least 10", b.level),
                    ));
                }
            }
        }
        if self.max_particles == 0 {
            return Err(Error::param("max_particles", "must be positive"));
        }
        Ok(())
    }

    fn root_stream(&self) -> u64 {
        mix64(self.replicate ^ 0xA076_1D64_78BD_642F)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub id: u64,
    pub position: f64,
    /// Stopping-line record this particle descends from (itself included).
    pub tag: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub time: f64,
    pub particles: Vec<SnapshotEntry>,
}

impl PopulationSnapshot {
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.particles.iter().map(|p| p.position)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn sort_by_id(&mut self) {
        self.particles.sort_by_key(|p| p.id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingLineRecord {
    pub id: u64,
    pub time: f64,
    pub position: f64,
    pub killed_at_window_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub id: u64,
    pub time: f64,
    pub position: f64,
    pub tag: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub particles_created: u64,
    pub branch_events: u64,
    pub extinctions: u64,
    pub steps: u64,
    pub killed: u64,
    pub pruned: u64,
    /// `Σ e^{-X}` over pruned particles at their pruning time: the expected
    /// additive-martingale mass removed from the run.
    pub pruned_weight: f64,
    pub floor_hits: u64,
    pub first_floor_hit: Option<f64>,
    pub stopped_early: bool,
    pub survivors: u64,
}

/// Result of [`evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub snapshots: Vec<PopulationSnapshot>,
    pub stopping_line: Vec<StoppingLineRecord>,
    pub pruned: Vec<PruneRecord>,
    pub stats: RunStats,
    pub barrier: Option<BarrierSpec>,
    pub descendants: DescendantMode,
}

impl Evolution {
    /// Census at a scheduled time.
    pub fn snapshot_at(&self, t: f64) -> Result<&PopulationSnapshot> {
        self.snapshots
            .iter()
            .find(|s| s.time == t)
            .ok_or(Error::UnscheduledSnapshot(t))
    }

    /// Stopping-line records with killing time in `[t1, t2]`.
    pub fn extract_stopping_line(&self, t1: f64, t2: f64) -> Result<Vec<StoppingLineRecord>> {
        match &self.barrier {
            Some(b) if b.has_killing() => {}
            _ => return Err(Error::BarrierMismatch("run had no killing barrier".into())),
        }
        Ok(self
            .stopping_line
            .iter()
            .filter(|r| r.time >= t1 && r.time <= t2)
            .copied()
            .collect())
    }

    pub fn has_lineage_tags(&self) -> bool {
        self.descendants == DescendantMode::ContinueTagged
    }
}

struct Pending {
    id: u64,
    birth: f64,
    position: f64,
    stream: u64,
    tag: Option<u64>,
}

enum Fate {
    Branched(f64),
    Survived,
    Removed,
}

struct Engine<'a> {
    cfg: &'a EngineConfig,
    schedule: Vec<f64>,
    snapshots: Vec<PopulationSnapshot>,
    stopping_line: Vec<StoppingLineRecord>,
    pruned: Vec<PruneRecord>,
    stats: RunStats,
    next_id: u64,
    abort: bool,
}

/// Runs one replicate.
pub fn evolve(cfg: &EngineConfig) -> Result<Evolution> {
    cfg.validate()?;
    let mut schedule = cfg.snapshots.clone();
    schedule.sort_by(f64::total_cmp);
    schedule.dedup();
    let snapshots = schedule
        .iter()
        .map(|&time| PopulationSnapshot {
            time,
            particles: Vec::new(),
        })
        .collect();
    let mut eng = Engine {
        cfg,
        schedule,
        snapshots,
        stopping_line: Vec::new(),
        pruned: Vec::new(),
        stats: RunStats::default(),
        next_id: 0,
        abort: false,
    };
    eng.run()?;
    Ok(Evolution {
        snapshots: eng.snapshots,
        stopping_line: eng.stopping_line,
        pruned: eng.pruned,
        stats: eng.stats,
        barrier: cfg.barrier,
        descendants: cfg.descendants,
    })
}

impl Engine<'_> {
    fn run(&mut self) -> Result<()> {
        let mut stack = vec![Pending {
            id: self.fresh_id(),
            birth: 0.0,
            position: self.cfg.start,
            stream: self.cfg.root_stream(),
            tag: None,
        }];
        while let Some(p) = stack.pop() {
            let parent_stream = p.stream;
            let (fate, x, tag, mut rng) = self.live(p);
            match fate {
                Fate::Branched(t) => {
                    self.stats.branch_events += 1;
                    let n = offspring_count(&mut rng, &self.cfg.law);
                    if n == 0 {
                        self.stats.extinctions += 1;
                    }
                    if self.stats.particles_created + n as u64 > self.cfg.max_particles as u64 {
                        return Err(Error::PopulationOverflow {
                            limit: self.cfg.max_particles,
                            partial: Box::new(self.stats.clone()),
                        });
                    }
                    // Reverse push so child 0 is processed first.
                    let base = self.next_id;
                    self.next_id += n as u64;
                    self.stats.particles_created += n as u64;
                    for k in (0..n).rev() {
                        stack.push(Pending {
                            id: base + k as u64,
                            birth: t,
                            position: x,
                            stream: derive_stream(parent_stream, k as u64),
                            tag,
                        });
                    }
                }
                Fate::Survived => self.stats.survivors += 1,
                Fate::Removed => {}
            }
            if self.abort {
                self.stats.stopped_early = true;
                break;
            }
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.particles_created += 1;
        id
    }

    fn record_snapshot(&mut self, idx: usize, id: u64, x: f64, tag: Option<u64>) {
        self.snapshots[idx].particles.push(SnapshotEntry { id, position: x, tag });
    }

    /// Simulates one particle from birth to death, horizon, killing, pruning
    /// or absorption.
    fn live(&mut self, p: Pending) -> (Fate, f64, Option<u64>, RngStream) {
        let cfg = self.cfg;
        let mut rng = RngStream::new(cfg.seed, p.stream);
        let death = p.birth + branch_time(&mut rng, &cfg.law);
        let end = death.min(cfg.horizon);
        let barrier = cfg.barrier.as_ref();
        let killing = barrier.filter(|b| b.has_killing());
        let floor = barrier.and_then(|b| b.floor);
        let sigma = cfg.diffusion.sigma;

        let mut t = p.birth;
        let mut x = p.position;
        let mut tag = p.tag;
        let mut next_snap = self.schedule.partition_point(|&s| s < t);

        loop {
            // Window-start kill.
            if let Some(b) = killing {
                if tag.is_none() && t == b.t_start && x <= b.level {
                    let frozen = self.kill(p.id, t, x, true);
                    if frozen {
                        return (Fate::Removed, x, tag, rng);
                    }
                    tag = Some(p.id);
                }
            }
            if let Some(c) = cfg.prune_ceiling {
                if x >= c {
                    self.stats.pruned += 1;
                    self.stats.pruned_weight += (-x).exp();
                    self.pruned.push(PruneRecord {
                        id: p.id,
                        time: t,
                        position: x,
                        tag,
                    });
                    return (Fate::Removed, x, tag, rng);
                }
            }
            while next_snap < self.schedule.len() && self.schedule[next_snap] <= t {
                if self.schedule[next_snap] == t && t < death {
                    self.record_snapshot(next_snap, p.id, x, tag);
                }
                next_snap += 1;
            }
            if t >= end {
                break;
            }

            // Next checkpoint.
            let mut target = end;
            if next_snap < self.schedule.len() {
                target = target.min(self.schedule[next_snap]);
            }
            if let Some(b) = killing {
                if tag.is_none() {
                    if t < b.t_start {
                        target = target.min(b.t_start);
                    } else if t < b.t_end {
                        target = target.min(b.t_end);
                    }
                }
            }

            let barrier_on = killing.is_some_and(|b| tag.is_none() && b.active_at(t));
            if !barrier_on && floor.is_none() {
                x += cfg.diffusion.increment(&mut rng, target - t);
                t = target;
                self.stats.steps += 1;
                continue;
            }

            // Stepped segment with bridge checks.
            while t < target {
                let h_nominal = match cfg.step_policy {
                    StepPolicy::Fixed => cfg.dt,
                    StepPolicy::Adaptive => {
                        let mut d = f64::INFINITY;
                        if barrier_on {
                            d = d.min(x - killing.unwrap().level);
                        }
                        if let Some(f) = floor {
                            d = d.min(x - f);
                        }
                        cfg.dt.max((d / 6.0).powi(2))
                    }
                };
                let t_next = if t + h_nominal >= target - 1e-12 * target.abs().max(1.0) {
                    target
                } else {
                    t + h_nominal
                };
                let h = t_next - t;
                let x1 = x + cfg.diffusion.increment(&mut rng, h);
                self.stats.steps += 1;

                if barrier_on && tag.is_none() {
                    let b = killing.unwrap();
                    let p_hit = bridge_hit_probability(x, x1, h, b.level, sigma);
                    if p_hit > 0.0 && (p_hit >= 1.0 || rng.open01() < p_hit) {
                        let tau = t + rng.open01() * h;
                        let frozen = self.kill(p.id, tau, b.level, false);
                        if frozen {
                            return (Fate::Removed, b.level, tag, rng);
                        }
                        tag = Some(p.id);
                    }
                }
                if let Some(f) = floor {
                    let p_hit = bridge_hit_probability(x, x1, h, f, sigma);
                    if p_hit > 0.0 && (p_hit >= 1.0 || rng.open01() < p_hit) {
                        self.stats.floor_hits += 1;
                        let tau = t + rng.open01() * h;
                        self.stats.first_floor_hit = Some(self.stats.first_floor_hit.map_or(tau, |s| s.min(tau)));
                        if cfg.stop_on_floor_hit {
                            self.abort = true;
                        }
                        return (Fate::Removed, f, tag, rng);
                    }
                }
                x = x1;
                t = t_next;
                if let Some(c) = cfg.prune_ceiling {
                    if x >= c {
                        break;
                    }
                }
            }
        }

        if death <= cfg.horizon {
            (Fate::Branched(death), x, tag, rng)
        } else {
            (Fate::Survived, x, tag, rng)
        }
    }

    /// Records a stopping-line entry; returns whether the particle is frozen.
    fn kill(&mut self, id: u64, time: f64, position: f64, at_start: bool) -> bool {
        self.stats.killed += 1;
        self.stopping_line.push(StoppingLineRecord {
            id,
            time,
            position,
            killed_at_window_start: at_start,
        });
        self.cfg.descendants == DescendantMode::Freeze
    }
}
