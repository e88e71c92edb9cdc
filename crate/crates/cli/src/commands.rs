use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bbm_core::constants::{constants_report, ConstantsReport, QuadOptions};
use bbm_core::engine::{evolve, write_snapshot, BarrierSpec, EngineConfig, Evolution, RunStats};
use bbm_core::functionals::{eval_additive, eval_derivative, FunctionalSpec};
use bbm_core::harness::{
    map_replicates, sha256_hex, stopping_line_closed_form, stopping_line_sum, stoppingline_moment_check,
    write_samples_csv, Execution, MomentCheck, ReplicateFailure, RunManifest, StatisticSpec, TimeWindow, Verdict,
    VerdictReport,
};
use bbm_core::kernels::{Diffusion, OffspringLaw};
use bbm_core::suites::{fluctuations_for, run_suite, Suite, SuiteOptions};
use serde::Serialize;

use crate::config::{CommandKind, Config};
use crate::error::CliError;

pub const RUN_MANIFEST_FORMAT: &str = "bbm-run/1";
pub const RUN_STATS_FORMAT: &str = "bbm-run-stats/1";
pub const STOPPING_LINE_FORMAT: &str = "bbm-stopping-line/1";
pub const STOPPING_CHECK_FORMAT: &str = "bbm-stopping-line-check/1";
pub const VERIFY_FORMAT: &str = "bbm-verify/1";
pub const CONSTANTS_TABLE_FORMAT: &str = "bbm-constants-table/1";
pub const ENSEMBLE_FORMAT: &str = "bbm-ensemble/1";

pub struct Outcome {
    pub pass: bool,
    pub manifest_hash: String,
}

/// Files written by one command, with their digests for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    format: &'static str,
    software_version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    outputs: &'a [OutputFile],
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Resource(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Resource(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Resource(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Writes `config.toml` and `manifest.json`. The hash covers the command,
    /// the settings that affect results and every output digest.
    fn finish(self, cmd: CommandKind, cfg: &Config) -> Result<String, CliError> {
        std::fs::write(self.dir.join("config.toml"), cfg.to_toml())?;
        let mut config = serde_json::to_value(cfg).map_err(|e| CliError::Resource(e.to_string()))?;
        if let Some(m) = config.as_object_mut() {
            m.remove("workers");
            m.remove("out");
        }
        let record = RunRecord {
            format: RUN_MANIFEST_FORMAT,
            software_version: env!("CARGO_PKG_VERSION"),
            command: cmd.name(),
            config,
            outputs: &self.files,
        };
        let hash = sha256_hex(&serde_json::to_vec(&record).map_err(|e| CliError::Resource(e.to_string()))?);
        let mut value = serde_json::to_value(&record).map_err(|e| CliError::Resource(e.to_string()))?;
        value["manifest_hash"] = serde_json::Value::String(hash.clone());
        let mut bytes = serde_json::to_vec_pretty(&value).map_err(|e| CliError::Resource(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(hash)
    }
}

fn execution(cfg: &Config) -> Execution {
    Execution::workers(cfg.workers)
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        println!("    {}", v.line());
    }
}

pub fn run(cmd: CommandKind, cfg: &Config) -> Result<Outcome, CliError> {
    cfg.validate(cmd)?;
    let out = Outputs::new(&cfg.out)?;
    let (pass, out) = match cmd {
        CommandKind::Simulate => simulate(cfg, out)?,
        CommandKind::Verify => verify(cfg, out)?,
        CommandKind::Constants => constants(cfg, out)?,
        CommandKind::Fluctuations => fluctuations(cfg, out)?,
        CommandKind::StoppingLine => stopping_line(cfg, out)?,
    };
    let manifest_hash = out.finish(cmd, cfg)?;
    Ok(Outcome { pass, manifest_hash })
}

fn simulate_engine(cfg: &Config) -> Result<EngineConfig, CliError> {
    let s = &cfg.simulate;
    let section = CliError::in_section("simulate");
    let mut e = EngineConfig::new(s.horizon);
    e.dt = s.dt;
    e.start = s.start;
    e.law = OffspringLaw::new(s.offspring.clone()).map_err(&section)?;
    e.diffusion = Diffusion {
        sigma: s.sigma,
        drift: s.drift,
    };
    if !s.snapshots.is_empty() {
        e.snapshots = s.snapshots.clone();
    }
    e.barrier = s.barrier;
    e.prune_ceiling = s.prune_ceiling.is_finite().then_some(s.prune_ceiling);
    e.descendants = s.descendants;
    e.step_policy = s.step_policy;
    e.stop_on_floor_hit = s.stop_on_floor_hit;
    e.max_particles = s.max_particles;
    e.seed = cfg.seed;
    e.validate().map_err(&section)?;
    Ok(e)
}

fn run_replicates(n: u64, engine: &EngineConfig, exec: Execution) -> Result<Vec<Evolution>, CliError> {
    map_replicates(n, exec, |r| {
        let mut c = engine.clone();
        c.replicate = r;
        evolve(&c)
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(CliError::from)
}

#[derive(Serialize)]
struct Census {
    t: f64,
    particles: usize,
    additive: f64,
    derivative: f64,
}

#[derive(Serialize)]
struct ReplicateStats {
    replicate: u64,
    stats: RunStats,
    censuses: Vec<Census>,
}

#[derive(Serialize)]
struct RunStatsFile {
    format: &'static str,
    replicates: Vec<ReplicateStats>,
}

fn stopping_line_csv(evs: &[Evolution]) -> String {
    let mut s = format!("# format: {STOPPING_LINE_FORMAT}\nreplicate,id,time,position,killed_at_window_start\n");
    for (r, ev) in evs.iter().enumerate() {
        for k in &ev.stopping_line {
            let _ = writeln!(s, "{r},{},{},{},{}", k.id, k.time, k.position, k.killed_at_window_start);
        }
    }
    s
}

fn simulate(cfg: &Config, mut out: Outputs) -> Result<(bool, Outputs), CliError> {
    let engine = simulate_engine(cfg)?;
    let evs = run_replicates(cfg.simulate.reps, &engine, execution(cfg))?;
    let mut replicates = Vec::new();
    for (r, ev) in evs.iter().enumerate() {
        let mut censuses = Vec::new();
        for snap in &ev.snapshots {
            if cfg.simulate.dump_snapshots {
                let mut bytes = Vec::new();
                write_snapshot(&mut bytes, snap)?;
                out.write(&format!("snapshots/rep{r:05}_t{}.bbmsnap", snap.time), &bytes)?;
            }
            censuses.push(Census {
                t: snap.time,
                particles: snap.len(),
                additive: eval_additive(snap),
                derivative: eval_derivative(snap),
            });
        }
        replicates.push(ReplicateStats {
            replicate: r as u64,
            stats: ev.stats.clone(),
            censuses,
        });
    }
    out.write("stopping_line.csv", stopping_line_csv(&evs).as_bytes())?;
    out.write_json(
        "run_stats.json",
        &RunStatsFile {
            format: RUN_STATS_FORMAT,
            replicates,
        },
    )?;
    println!("simulate: {} replicates to t = {}", evs.len(), engine.horizon);
    Ok((true, out))
}

#[derive(Serialize)]
struct SuiteVerdicts {
    suite: Suite,
    pass: bool,
    verdicts: Vec<Verdict>,
}

#[derive(Serialize)]
struct VerifyReport {
    format: &'static str,
    pass: bool,
    suites: Vec<SuiteVerdicts>,
}

fn verify(cfg: &Config, mut out: Outputs) -> Result<(bool, Outputs), CliError> {
    let v = &cfg.verify;
    let suites: Vec<Suite> = if v.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        v.suites
            .iter()
            .map(|s| {
                s.parse::<Suite>().map_err(|e| match e {
                    bbm_core::Error::InvalidParameter { reason, .. } => {
                        CliError::Usage(format!("invalid value for `verify.suites`: {reason}"))
                    }
                    other => other.into(),
                })
            })
            .collect::<Result<_, _>>()?
    };
    let o = SuiteOptions {
        seed: cfg.seed,
        reps: v.reps,
        t: v.t,
        dt: v.dt,
        exec: execution(cfg),
    };
    let mut reports = Vec::new();
    for s in suites {
        let start = Instant::now();
        let r = run_suite(s, &o).map_err(CliError::in_section("verify"))?;
        println!(
            "{} {} ({} checks, {:.1} s)",
            if r.pass() { "PASS" } else { "FAIL" },
            s.name(),
            r.verdicts.len(),
            start.elapsed().as_secs_f64()
        );
        print_verdicts(&r.verdicts);
        reports.push(SuiteVerdicts {
            suite: s,
            pass: r.pass(),
            verdicts: r.verdicts,
        });
    }
    let pass = reports.iter().all(|r| r.pass);
    out.write_json(
        "verdicts.json",
        &VerifyReport {
            format: VERIFY_FORMAT,
            pass,
            suites: reports,
        },
    )?;
    Ok((pass, out))
}

#[derive(Serialize)]
struct ConstantsTable {
    format: &'static str,
    entries: Vec<ConstantsReport>,
}

fn constants(cfg: &Config, mut out: Outputs) -> Result<(bool, Outputs), CliError> {
    let c = &cfg.constants;
    let mut entries = Vec::new();
    for key in &c.functionals {
        let f = FunctionalSpec::from_key(key).map_err(CliError::in_section("constants"))?;
        entries.push(constants_report(&f, c.mu_z, QuadOptions::default()).map_err(CliError::in_section("constants"))?);
    }
    let mut csv = format!(
        "# format: {CONSTANTS_TABLE_FORMAT}\nfunctional,c1,c2,c3,logt_coeff,bessel_mean,mu_z,full_scale,full_log_coeff,full_drift,quadrature_error\n"
    );
    for e in &entries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.functional,
            e.c1,
            e.c2,
            e.c3,
            e.logt_coeff,
            e.bessel_mean,
            e.mu_z,
            e.full_range.scale,
            e.full_range.log_coeff,
            e.full_range.drift,
            e.quadrature_error
        );
        println!(
            "{}: c1 = {:.10}, c2 = {:.10}, c3 = {:.10}, log t coefficient = {:.10}",
            e.functional, e.c1, e.c2, e.c3, e.logt_coeff
        );
    }
    out.write("constants.csv", csv.as_bytes())?;
    out.write_json(
        "constants.json",
        &ConstantsTable {
            format: CONSTANTS_TABLE_FORMAT,
            entries,
        },
    )?;
    Ok((true, out))
}

#[derive(Serialize)]
struct EnsembleSummary<'a> {
    format: &'static str,
    manifest_hash: &'a str,
    requested: u64,
    net: usize,
    failures: &'a [ReplicateFailure],
}

fn fluctuations(cfg: &Config, mut out: Outputs) -> Result<(bool, Outputs), CliError> {
    let f = &cfg.fluctuations;
    let section = CliError::in_section("fluctuations");
    let functional = FunctionalSpec::from_key(&f.functional).map_err(&section)?;
    let stat = StatisticSpec {
        mode: f.mode,
        t: f.t,
        proxy_time: f.t + f.proxy_offset,
        functional,
    };
    let mut engine = EngineConfig::new(stat.proxy_time);
    engine.dt = f.dt;
    engine.prune_ceiling = f.prune_ceiling.is_finite().then_some(f.prune_ceiling);
    let mut manifest = RunManifest::new(engine, stat, cfg.seed, f.reps);
    manifest.budget_seconds = f.budget_seconds;
    manifest.outputs = ["samples.csv", "verdicts.json", "ensemble.json"].map(String::from).to_vec();
    manifest.validate().map_err(&section)?;
    let report = fluctuations_for(&manifest, execution(cfg)).map_err(&section)?;
    let ens = &report.ensemble;
    let mut samples = Vec::new();
    write_samples_csv(&mut samples, ens)?;
    out.write("run_manifest.json", manifest.to_json().as_bytes())?;
    out.write("samples.csv", &samples)?;
    out.write_json(
        "ensemble.json",
        &EnsembleSummary {
            format: ENSEMBLE_FORMAT,
            manifest_hash: &ens.manifest_hash,
            requested: ens.requested,
            net: ens.net_size(),
            failures: &ens.failures,
        },
    )?;
    let verdicts = VerdictReport::new(report.verdicts);
    let pass = verdicts.all_pass();
    println!(
        "fluctuations: {} of {} replicates, t = {}, T = {}",
        ens.net_size(),
        ens.requested,
        f.t,
        f.t + f.proxy_offset
    );
    print_verdicts(&verdicts.verdicts);
    out.write_json("verdicts.json", &verdicts)?;
    Ok((pass, out))
}

#[derive(Serialize)]
struct StoppingLineCheck {
    format: &'static str,
    start: f64,
    level: f64,
    window: TimeWindow,
    closed_form: f64,
    observed_mean: f64,
    compensator_mean: f64,
    check: MomentCheck,
}

fn stopping_line(cfg: &Config, mut out: Outputs) -> Result<(bool, Outputs), CliError> {
    let s = &cfg.stopping_line;
    let section = CliError::in_section("stopping_line");
    let mut engine = EngineConfig::new(s.horizon);
    engine.start = s.start;
    engine.dt = s.dt;
    engine.step_policy = s.step_policy;
    engine.barrier = Some(BarrierSpec::killing(s.level, 0.0, f64::INFINITY));
    engine.prune_ceiling = Some(s.prune_ceiling);
    engine.seed = cfg.seed;
    engine.validate().map_err(&section)?;
    let window = TimeWindow {
        from: s.window_from,
        to: s.window_to,
    };
    let evs = run_replicates(s.reps, &engine, execution(cfg))?;
    let sums = evs
        .iter()
        .map(|ev| stopping_line_sum(ev, window))
        .collect::<Result<Vec<_>, _>>()
        .map_err(&section)?;
    let totals: Vec<f64> = sums.iter().map(|x| x.total).collect();
    let closed_form = stopping_line_closed_form(
        s.start - s.level,
        |r| if window.contains(r) { 1.0 } else { 0.0 },
        &[window.from, window.to],
    )
    .map_err(&section)?;
    let check = stoppingline_moment_check(&totals, closed_form).map_err(&section)?;
    let n = sums.len() as f64;
    let verdict = Verdict::within(
        format!("stopping line x={}: E sum phi(T_u)", s.start - s.level),
        check.mc_mean,
        closed_form,
        3.0 * check.se,
    )
    .with_detail(format!("z = {:.2}, {} replicates", check.z, check.n));
    println!("stopping-line: {} replicates", evs.len());
    print_verdicts(std::slice::from_ref(&verdict));
    out.write("stopping_line.csv", stopping_line_csv(&evs).as_bytes())?;
    out.write_json(
        "stopping_line.json",
        &StoppingLineCheck {
            format: STOPPING_CHECK_FORMAT,
            start: s.start,
            level: s.level,
            window,
            closed_form,
            observed_mean: sums.iter().map(|x| x.observed).sum::<f64>() / n,
            compensator_mean: sums.iter().map(|x| x.compensator).sum::<f64>() / n,
            check,
        },
    )?;
    let pass = verdict.pass;
    out.write_json("verdicts.json", &VerdictReport::new(vec![verdict]))?;
    Ok((pass, out))
}
