use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Ensemble, FluctuationSample};
use crate::error::{Error, Result};
use crate::serde_ext::extended_f64;

pub const SAMPLES_FORMAT: &str = "bbm-samples/1";
pub const VERDICTS_FORMAT: &str = "bbm-verdicts/1";

const HEADER: &str = "manifest_hash,replicate,t,T,W_t,Z_t,Z_t_F,Z_T,statistic";

/// One row per successful replicate. Floats use the shortest representation
/// that round-trips, so reruns are byte-identical.
pub fn write_samples_csv(mut w: impl Write, ens: &Ensemble) -> Result<()> {
    writeln!(w, "# format: {SAMPLES_FORMAT}")?;
    writeln!(w, "{HEADER}")?;
    for s in &ens.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            ens.manifest_hash, s.replicate, s.t, s.proxy_time, s.w_t, s.z_t, s.z_f, s.z_proxy, s.statistic
        )?;
    }
    Ok(())
}

pub fn read_samples_csv(r: impl BufRead) -> Result<(String, Vec<FluctuationSample>)> {
    let mut lines = r.lines();
    let tag = lines.next().transpose()?.unwrap_or_default();
    if tag.trim() != format!("# format: {SAMPLES_FORMAT}") {
        return Err(Error::Format(format!("expected `# format: {SAMPLES_FORMAT}`, got `{tag}`")));
    }
    if lines.next().transpose()?.as_deref() != Some(HEADER) {
        return Err(Error::Format("unexpected sample header".into()));
    }
    let mut hash = String::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format(format!("row {}: expected 9 fields, got {}", i + 1, f.len())));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad number `{}`", i + 1, f[k])))
        };
        hash = f[0].to_string();
        out.push(FluctuationSample {
            replicate: f[1]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad replicate", i + 1)))?,
            t: num(2)?,
            proxy_time: num(3)?,
            w_t: num(4)?,
            z_t: num(5)?,
            z_f: num(6)?,
            z_proxy: num(7)?,
            statistic: num(8)?,
        });
    }
    Ok((hash, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    #[serde(with = "extended_f64")]
    pub observed: f64,
    #[serde(with = "extended_f64")]
    pub predicted: f64,
    #[serde(with = "extended_f64")]
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Verdict {
    pub fn new(check: impl Into<String>, observed: f64, predicted: f64, tolerance: f64, pass: bool) -> Self {
        Verdict {
            check: check.into(),
            observed,
            predicted,
            tolerance,
            pass,
            detail: String::new(),
        }
    }

    /// `|observed − predicted| ≤ tolerance`.
    pub fn within(check: impl Into<String>, observed: f64, predicted: f64, tolerance: f64) -> Self {
        let pass = (observed - predicted).abs() <= tolerance;
        Self::new(check, observed, predicted, tolerance, pass)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: observed {:.6e}, predicted {:.6e}, tolerance {:.3e}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.observed,
            self.predicted,
            self.tolerance,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub format: String,
    pub verdicts: Vec<Verdict>,
}

impl VerdictReport {
    pub fn new(verdicts: Vec<Verdict>) -> Self {
        VerdictReport {
            format: VERDICTS_FORMAT.to_string(),
            verdicts,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

pub fn write_verdicts(w: impl Write, report: &VerdictReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}
