//! Energy and time measurement: power-trace integration, a simulated power
//! logger and the pluggable backends a campaign measures through.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("trace needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotonic(usize),
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("window [{start}, {end}] is outside the trace span [{first}, {last}]")]
    Window { start: f64, end: f64, first: f64, last: f64 },
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duration {duration} s is shorter than 10 sample periods ({min} s)")]
    DurationTooShort { duration: f64, min: f64 },
    #[error("invalid device model: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t: f64,
    pub watts: f64,
}

/// Timestamped power samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
}

impl PowerTrace {
    pub fn new(samples: Vec<PowerSample>) -> Result<Self, MeasureError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || !s.watts.is_finite() {
                return Err(MeasureError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(MeasureError::NonMonotonic(i));
            }
        }
        Ok(PowerTrace { samples })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, MeasureError> {
        Self::new(pairs.into_iter().map(|(t, watts)| PowerSample { t, watts }).collect())
    }

    /// Samples `f` at times `start, start + dt, ...` up to and including `end`.
    pub fn sampled(start: f64, end: f64, dt: f64, f: impl Fn(f64) -> f64) -> Result<Self, MeasureError> {
        let n = ((end - start) / dt).round() as usize;
        Self::from_pairs((0..=n).map(|i| {
            let t = if i == n { end } else { start + i as f64 * dt };
            (t, f(t))
        }))
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Parses `<timestamp_s> <power_w>` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, MeasureError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse = |v: Option<&str>, what: &str| -> Result<f64, MeasureError> {
                let v = v.ok_or_else(|| MeasureError::Parse {
                    line: i + 1,
                    msg: format!("missing {what}"),
                })?;
                v.parse().map_err(|_| MeasureError::Parse {
                    line: i + 1,
                    msg: format!("bad {what} {v:?}"),
                })
            };
            let t = parse(fields.next(), "timestamp")?;
            let watts = parse(fields.next(), "power")?;
            if fields.next().is_some() {
                return Err(MeasureError::Parse {
                    line: i + 1,
                    msg: "expected two fields".into(),
                });
            }
            samples.push(PowerSample { t, watts });
        }
        Self::new(samples)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# timestamp_s power_w\n");
        for s in &self.samples {
            out.push_str(&format!("{} {}\n", s.t, s.watts));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Unavailable,
}

/// Outcome of measuring one execution.
///
/// `energy_j` and `avg_power_w` are absent for time-only backends; an
/// unavailable measurement carries a reason and no values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub status: Status,
    pub energy_j: Option<f64>,
    pub time_s: Option<f64>,
    pub avg_power_w: Option<f64>,
    pub reason: Option<String>,
}

impl Measurement {
    pub fn ok(energy_j: f64, time_s: f64) -> Self {
        let avg = (time_s > 0.0).then(|| energy_j / time_s);
        Measurement {
            status: Status::Ok,
            energy_j: Some(energy_j),
            time_s: Some(time_s),
            avg_power_w: avg,
            reason: None,
        }
    }

    pub fn time_only(time_s: f64) -> Self {
        Measurement {
            status: Status::Ok,
            energy_j: None,
            time_s: Some(time_s),
            avg_power_w: None,
            reason: None,
        }
    }

    pub fn unavailable(reason: impl Into<String>) -> Self {
        Measurement {
            status: Status::Unavailable,
            energy_j: None,
            time_s: None,
            avg_power_w: None,
            reason: Some(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn value(&self, metric: crate::stats::Metric) -> Option<f64> {
        use crate::stats::Metric;
        if !self.is_ok() {
            return None;
        }
        match metric {
            Metric::Energy => self.energy_j,
            Metric::Time => self.time_s,
            Metric::Power => self.avg_power_w,
        }
    }
}

/// Trapezoidal energy over the whole trace.
pub fn integrate_trace(t: &PowerTrace) -> Result<Measurement, MeasureError> {
    let s = t.samples();
    if s.len() < 2 {
        return Err(MeasureError::TooFewSamples(s.len()));
    }
    let energy: f64 = s.windows(2).map(|w| 0.5 * (w[0].watts + w[1].watts) * (w[1].t - w[0].t)).sum();
    let time = s[s.len() - 1].t - s[0].t;
    Ok(Measurement::ok(energy, time))
}

fn interpolate(a: PowerSample, b: PowerSample, t: f64) -> PowerSample {
    let frac = (t - a.t) / (b.t - a.t);
    PowerSample {
        t,
        watts: a.watts + frac * (b.watts - a.watts),
    }
}

/// The part of a trace between `start` and `end`, with linearly interpolated
/// boundary samples.
pub fn window_trace(t: &PowerTrace, start: f64, end: f64) -> Result<PowerTrace, MeasureError> {
    let s = t.samples();
    if s.len() < 2 {
        return Err(MeasureError::TooFewSamples(s.len()));
    }
    let (first, last) = (s[0].t, s[s.len() - 1].t);
    if !(start < end && start >= first && end <= last) {
        return Err(MeasureError::Window { start, end, first, last });
    }
    let value_at = |x: f64| -> PowerSample {
        // index of the first sample with t >= x
        let i = s.partition_point(|p| p.t < x);
        if s[i].t == x {
            s[i]
        } else {
            interpolate(s[i - 1], s[i], x)
        }
    };
    let mut out = vec![value_at(start)];
    out.extend(s.iter().copied().filter(|p| p.t > start && p.t < end));
    out.push(value_at(end));
    PowerTrace::new(out)
}

/// Simulated power logger with a multiplicative per-factor power model:
/// `power = base_power * Π (1 + e_j * x_j)` over the model's factors, where
/// `x_j` is the factor's level (absent factors count as 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    pub base_power: f64,
    #[serde(default)]
    pub effects: BTreeMap<String, f64>,
    /// Relative standard deviation of per-sample noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    /// Each sample interval is drawn uniformly within ±jitter of the period (relative).
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_period() -> f64 {
    1e-3
}

impl DeviceModel {
    pub fn constant(base_power: f64) -> Self {
        DeviceModel {
            base_power,
            effects: BTreeMap::new(),
            noise: 0.0,
            sample_period: default_sample_period(),
            jitter: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let bad = |m: String| Err(MeasureError::Model(m));
        if !(self.base_power > 0.0 && self.base_power.is_finite()) {
            return bad(format!("base_power must be positive, got {}", self.base_power));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return bad(format!("sample_period must be positive, got {}", self.sample_period));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if let Some((name, e)) = self.effects.iter().find(|(_, e)| !(e.abs() < 1.0)) {
            return bad(format!("effect for {name} is {e}; |e| < 1 keeps power positive"));
        }
        Ok(())
    }

    /// Noise-free power for the given factor levels.
    pub fn response(&self, levels: &BTreeMap<String, i8>) -> f64 {
        self.effects.iter().fold(self.base_power, |p, (name, e)| {
            let x = levels.get(name).copied().unwrap_or(0) as f64;
            p * (1.0 + e * x)
        })
    }
}

/// Generates the power trace the simulated device would log for one execution.
pub fn simulate_execution(
    m: &DeviceModel,
    levels: &BTreeMap<String, i8>,
    duration: f64,
) -> Result<PowerTrace, MeasureError> {
    m.validate()?;
    let min = 10.0 * m.sample_period;
    if !(duration >= min) {
        return Err(MeasureError::DurationTooShort { duration, min });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
    let power = m.response(levels);
    let sample = |t: f64, rng: &mut ChaCha8Rng| {
        let z: f64 = rng.sample(StandardNormal);
        PowerSample {
            t,
            watts: power * (1.0 + m.noise * z),
        }
    };
    let mut samples = vec![sample(0.0, &mut rng)];
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random_range(-1.0..=1.0);
        t += m.sample_period * (1.0 + m.jitter * u);
        // the logger stops at the end of the run; the final sample lands on it exactly
        if t >= duration - 0.5 * m.sample_period * (1.0 - m.jitter) {
            samples.push(sample(duration, &mut rng));
            break;
        }
        samples.push(sample(t, &mut rng));
    }
    PowerTrace::new(samples)
}

/// Stable 64-bit seed derived from a base seed and labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Simulated device as a campaign backend: the power model plus a run-time
/// model, both multiplicative in factor levels, with optional per-level
/// (e.g. `-O2`) scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedBackend {
    pub model: DeviceModel,
    pub base_duration: f64,
    #[serde(default)]
    pub time_effects: BTreeMap<String, f64>,
    #[serde(default)]
    pub level_time: BTreeMap<String, f64>,
    #[serde(default)]
    pub level_power: BTreeMap<String, f64>,
}

impl SimulatedBackend {
    pub fn new(model: DeviceModel, base_duration: f64) -> Self {
        SimulatedBackend {
            model,
            base_duration,
            time_effects: BTreeMap::new(),
            level_time: BTreeMap::new(),
            level_power: BTreeMap::new(),
        }
    }

    fn level_scale(map: &BTreeMap<String, f64>, level: &str) -> f64 {
        let bare = level.trim_start_matches('-');
        map.get(level)
            .or_else(|| map.get(bare))
            .or_else(|| map.get(&format!("-{bare}")))
            .copied()
            .unwrap_or(1.0)
    }

    pub fn duration_for(&self, inv: &RunInvocation) -> f64 {
        let scale = Self::level_scale(&self.level_time, &inv.opt_level);
        self.time_effects.iter().fold(self.base_duration * scale, |d, (name, e)| {
            let x = inv.levels.get(name).copied().unwrap_or(0) as f64;
            d * (1.0 + e * x)
        })
    }

    pub fn trace_for(&self, inv: &RunInvocation) -> Result<PowerTrace, MeasureError> {
        let mut model = self.model.clone();
        model.base_power *= Self::level_scale(&self.level_power, &inv.opt_level);
        model.seed = derive_seed(self.model.seed, &[&inv.run_id, &inv.replicate.to_string()]);
        simulate_execution(&model, &inv.levels, self.duration_for(inv))
    }
}

/// How a campaign obtains measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Wall-clock time of the run command; energy only with a nominal power.
    WallClock {
        #[serde(default)]
        nominal_power_w: Option<f64>,
    },
    /// A command printing `energy_j=<float>` and `time_s=<float>` lines.
    External {
        command: String,
        /// Optional readiness check; a nonzero exit pauses the campaign.
        #[serde(default)]
        probe: Option<String>,
    },
    /// Runs the command, then reads and integrates a trace file.
    TraceFile {
        #[serde(default)]
        command: Option<String>,
        path: String,
    },
    Simulated(SimulatedBackend),
}

impl BackendSpec {
    /// Identity used in run ids.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("backend spec serializes")
    }

    /// Whether the backend yields energy values.
    pub fn has_energy(&self) -> bool {
        !matches!(self, BackendSpec::WallClock { nominal_power_w: None })
    }
}

/// Everything a backend needs to measure one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInvocation {
    /// Run command with placeholders already substituted.
    pub command: String,
    pub bin: PathBuf,
    pub run_id: String,
    pub replicate: u32,
    pub opt_level: String,
    pub levels: BTreeMap<String, i8>,
}

impl RunInvocation {
    fn substitute_path(&self, template: &str) -> String {
        template
            .replace("{bin}", &self.bin.to_string_lossy())
            .replace("{run_id}", &self.run_id)
            .replace("{replicate}", &self.replicate.to_string())
    }

    fn substitute(&self, template: &str) -> String {
        template
            .replace("{bin}", &shell_quote(&self.bin.to_string_lossy()))
            .replace("{cmd}", &self.command)
            .replace("{run_id}", &self.run_id)
            .replace("{replicate}", &self.replicate.to_string())
    }
}

/// Single-quotes a string for `sh` when it contains anything unusual.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=+,:@%".contains(c)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

pub(crate) struct ShellOutput {
    pub success: bool,
    pub stdout: String,
    pub stderr: String,
    pub code: Option<i32>,
}

pub(crate) fn run_shell(cmd: &str, cwd: Option<&Path>) -> std::io::Result<ShellOutput> {
    let mut c = Command::new("sh");
    c.arg("-c").arg(cmd);
    if let Some(dir) = cwd {
        c.current_dir(dir);
    }
    let out = c.output()?;
    Ok(ShellOutput {
        success: out.status.success(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        code: out.status.code(),
    })
}

fn describe_failure(what: &str, out: &ShellOutput) -> String {
    let code = out.code.map_or("signal".to_string(), |c| c.to_string());
    let stderr = out.stderr.trim();
    if stderr.is_empty() {
        format!("{what} exited with {code}")
    } else {
        format!("{what} exited with {code}: {stderr}")
    }
}

/// Reads `energy_j=` and `time_s=` lines from external-backend output.
pub fn parse_external_output(stdout: &str) -> Result<Measurement, String> {
    let mut energy = None;
    let mut time = None;
    for line in stdout.lines() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("energy_j=") {
            energy = Some(v.trim().parse::<f64>().map_err(|_| format!("bad energy_j value {v:?}"))?);
        } else if let Some(v) = line.strip_prefix("time_s=") {
            time = Some(v.trim().parse::<f64>().map_err(|_| format!("bad time_s value {v:?}"))?);
        }
    }
    match (energy, time) {
        (Some(e), Some(t)) if e.is_finite() && t.is_finite() && t >= 0.0 => Ok(Measurement::ok(e, t)),
        (Some(_), Some(_)) => Err("energy_j/time_s must be finite with time_s >= 0".into()),
        (None, _) => Err("output has no energy_j= line".into()),
        (_, None) => Err("output has no time_s= line".into()),
    }
}

/// Measures one execution. Failures become `status = unavailable`, never errors.
pub fn measure_via_backend(backend: &BackendSpec, inv: &RunInvocation) -> Measurement {
    match backend {
        BackendSpec::WallClock { nominal_power_w } => {
            let start = Instant::now();
            match run_shell(&inv.command, None) {
                Ok(out) if out.success => {
                    let time = start.elapsed().as_secs_f64();
                    match nominal_power_w {
                        Some(p) => Measurement::ok(time * p, time),
                        None => Measurement::time_only(time),
                    }
                }
                Ok(out) => Measurement::unavailable(describe_failure("run command", &out)),
                Err(e) => Measurement::unavailable(format!("cannot start run command: {e}")),
            }
        }
        BackendSpec::External { command, .. } => match run_shell(&inv.substitute(command), None) {
            Ok(out) if out.success => {
                parse_external_output(&out.stdout).unwrap_or_else(Measurement::unavailable)
            }
            Ok(out) => Measurement::unavailable(describe_failure("measurement command", &out)),
            Err(e) => Measurement::unavailable(format!("cannot start measurement command: {e}")),
        },
        BackendSpec::TraceFile { command, path } => {
            if let Some(cmd) = command {
                match run_shell(&inv.substitute(cmd), None) {
                    Ok(out) if out.success => {}
                    Ok(out) => return Measurement::unavailable(describe_failure("trace command", &out)),
                    Err(e) => return Measurement::unavailable(format!("cannot start trace command: {e}")),
                }
            }
            let path = inv.substitute_path(path);
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => return Measurement::unavailable(format!("cannot read trace {path}: {e}")),
            };
            PowerTrace::parse(&text)
                .and_then(|t| integrate_trace(&t))
                .unwrap_or_else(|e| Measurement::unavailable(format!("malformed trace {path}: {e}")))
        }
        BackendSpec::Simulated(sim) => sim
            .trace_for(inv)
            .and_then(|t| integrate_trace(&t))
            .unwrap_or_else(|e| Measurement::unavailable(e.to_string())),
    }
}

/// Raised when the measuring device cannot be reached; campaigns pause on it.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("measurement device unreachable: {0}")]
pub struct DeviceUnreachable(pub String);

/// A measurement device handle. `measure` takes `&mut self`: one
/// measurement in flight per device.
#[derive(Debug)]
pub struct Device {
    backend: BackendSpec,
    measurements: usize,
}

impl Device {
    pub fn new(backend: BackendSpec) -> Self {
        Device {
            backend,
            measurements: 0,
        }
    }

    pub fn backend(&self) -> &BackendSpec {
        &self.backend
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn check_ready(&self) -> Result<(), DeviceUnreachable> {
        match &self.backend {
            BackendSpec::External { probe: Some(probe), .. } => match run_shell(probe, None) {
                Ok(out) if out.success => Ok(()),
                Ok(out) => Err(DeviceUnreachable(describe_failure("probe", &out))),
                Err(e) => Err(DeviceUnreachable(e.to_string())),
            },
            BackendSpec::TraceFile { path, .. } => {
                let dir = Path::new(path).parent().filter(|p| !p.as_os_str().is_empty());
                match dir {
                    Some(d) if !d.to_string_lossy().contains('{') && !d.is_dir() => {
                        Err(DeviceUnreachable(format!("trace directory {} does not exist", d.display())))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn measure(&mut self, inv: &RunInvocation) -> Measurement {
        self.measurements += 1;
        measure_via_backend(&self.backend, inv)
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::WallClock { .. } => f.write_str("wall-clock"),
            BackendSpec::External { .. } => f.write_str("external"),
            BackendSpec::TraceFile { .. } => f.write_str("trace-file"),
            BackendSpec::Simulated(_) => f.write_str("simulated"),
        }
    }
}

impl FromStr for PowerTrace {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PowerTrace::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn inv(levels: &[(&str, i8)]) -> RunInvocation {
        RunInvocation {
            command: "true".into(),
            bin: PathBuf::from("/nonexistent/bin"),
            run_id: "r0".into(),
            replicate: 0,
            opt_level: "-O1".into(),
            levels: levels.iter().map(|(n, l)| (n.to_string(), *l)).collect(),
        }
    }

    #[test]
    fn constant_trace_integrates_to_rectangle() {
        let t = PowerTrace::sampled(0.0, 2.0, 1e-3, |_| 1.0).unwrap();
        let m = integrate_trace(&t).unwrap();
        assert!(rel(m.energy_j.unwrap(), 2.0) < 1e-12);
        assert!(rel(m.time_s.unwrap(), 2.0) < 1e-12);
    }

    #[test]
    fn table_four_power_level() {
        let t = PowerTrace::sampled(0.0, 1.0, 1e-3, |_| 0.168).unwrap();
        let m = integrate_trace(&t).unwrap();
        assert!(rel(m.energy_j.unwrap(), 0.168) < 1e-12);
        assert!(rel(m.avg_power_w.unwrap(), 0.168) < 1e-12);
    }

    #[test]
    fn ramp_integrates_to_half() {
        let t = PowerTrace::sampled(0.0, 1.0, 1e-3, |x| x).unwrap();
        assert!(rel(integrate_trace(&t).unwrap().energy_j.unwrap(), 0.5) < 1e-3);
    }

    #[test]
    fn integration_errors() {
        let one = PowerTrace::from_pairs([(0.0, 1.0)]).unwrap();
        assert_eq!(integrate_trace(&one), Err(MeasureError::TooFewSamples(1)));
        assert_eq!(
            PowerTrace::from_pairs([(0.0, 1.0), (0.0, 1.0)]),
            Err(MeasureError::NonMonotonic(1))
        );
        assert_eq!(PowerTrace::from_pairs([(0.0, f64::NAN)]), Err(MeasureError::NonFinite(0)));
    }

    #[test]
    fn windows() {
        let flat = PowerTrace::sampled(0.0, 1.0, 1e-3, |_| 1.0).unwrap();
        let w = window_trace(&flat, 0.1, 0.35).unwrap();
        assert!(rel(integrate_trace(&w).unwrap().energy_j.unwrap(), 0.25) < 1e-9);

        let full = window_trace(&flat, 0.0, 1.0).unwrap();
        assert_eq!(integrate_trace(&full).unwrap(), integrate_trace(&flat).unwrap());

        let ramp = PowerTrace::sampled(0.0, 1.0, 1e-3, |x| x).unwrap();
        let w = window_trace(&ramp, 0.25, 0.75).unwrap();
        assert!(rel(integrate_trace(&w).unwrap().energy_j.unwrap(), 0.25) < 1e-9);

        // boundaries between samples are interpolated
        let coarse = PowerTrace::from_pairs([(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let w = window_trace(&coarse, 0.25, 0.75).unwrap();
        assert_eq!(w.samples()[0].watts, 0.25);
        assert!(rel(integrate_trace(&w).unwrap().energy_j.unwrap(), 0.25) < 1e-12);

        assert!(matches!(window_trace(&flat, -0.1, 0.5), Err(MeasureError::Window { .. })));
        assert!(matches!(window_trace(&flat, 0.5, 0.5), Err(MeasureError::Window { .. })));
    }

    #[test]
    fn trace_text_round_trip() {
        let text = "# logger output\n0 1.5\n0.001 1.25\n\n0.002 1.0\n";
        let t: PowerTrace = text.parse().unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(PowerTrace::parse(&t.to_text()).unwrap(), t);
        assert!(matches!(PowerTrace::parse("0 1\n0,5 2\n"), Err(MeasureError::Parse { line: 2, .. })));
        assert!(matches!(PowerTrace::parse("0 1 2\n"), Err(MeasureError::Parse { .. })));
    }

    #[test]
    fn simulated_constant_model() {
        let m = DeviceModel::constant(0.168);
        let t = simulate_execution(&m, &BTreeMap::new(), 1.0).unwrap();
        let e = integrate_trace(&t).unwrap().energy_j.unwrap();
        assert!(rel(e, 0.168) < 5e-4, "{e}");
    }

    #[test]
    fn simulation_is_reproducible_and_level_blind_without_effects() {
        let mut m = DeviceModel::constant(2.0);
        m.noise = 0.01;
        m.jitter = 0.1;
        m.seed = 42;
        let hi: BTreeMap<String, i8> = [("a".to_string(), 1)].into();
        let lo: BTreeMap<String, i8> = [("a".to_string(), -1)].into();
        let a = simulate_execution(&m, &hi, 0.5).unwrap();
        let b = simulate_execution(&m, &hi, 0.5).unwrap();
        let c = simulate_execution(&m, &lo, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let (first, last) = a.span().unwrap();
        assert_eq!((first, last), (0.0, 0.5));
    }

    #[test]
    fn simulated_single_factor_ratio() {
        let mut m = DeviceModel::constant(1.0);
        m.effects.insert("a".into(), 0.02);
        m.noise = 0.005;
        m.jitter = 0.05;
        let mean_power = |level: i8| {
            let levels: BTreeMap<String, i8> = [("a".to_string(), level)].into();
            let total: f64 = (0..32)
                .map(|rep| {
                    let mut mm = m.clone();
                    mm.seed = derive_seed(7, &[&level.to_string(), &rep.to_string()]);
                    let t = simulate_execution(&mm, &levels, 0.2).unwrap();
                    integrate_trace(&t).unwrap().avg_power_w.unwrap()
                })
                .sum();
            total / 32.0
        };
        let ratio = mean_power(1) / mean_power(-1);
        assert!((ratio - 1.02 / 0.98).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn simulation_rejects_short_runs_and_bad_models() {
        let m = DeviceModel::constant(1.0);
        assert!(matches!(
            simulate_execution(&m, &BTreeMap::new(), 0.005),
            Err(MeasureError::DurationTooShort { .. })
        ));
        let mut bad = DeviceModel::constant(1.0);
        bad.effects.insert("x".into(), -1.0);
        assert!(matches!(bad.validate(), Err(MeasureError::Model(_))));
        bad.effects.clear();
        bad.jitter = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn external_backend_protocol() {
        let backend = BackendSpec::External {
            command: "printf 'energy_j=5.78\\ntime_s=3.2\\n'".into(),
            probe: None,
        };
        let m = measure_via_backend(&backend, &inv(&[]));
        assert_eq!(m.energy_j, Some(5.78));
        assert_eq!(m.time_s, Some(3.2));
        assert!((m.avg_power_w.unwrap() - 1.80625).abs() < 1e-12);
    }

    #[test]
    fn external_backend_failures_are_unavailable() {
        let failing = BackendSpec::External {
            command: "echo boom >&2; exit 3".into(),
            probe: None,
        };
        let m = measure_via_backend(&failing, &inv(&[]));
        assert_eq!(m.status, Status::Unavailable);
        assert!(m.reason.unwrap().contains("exited with 3: boom"));

        let garbled = BackendSpec::External {
            command: "echo energy_j=abc; echo time_s=1".into(),
            probe: None,
        };
        assert_eq!(measure_via_backend(&garbled, &inv(&[])).status, Status::Unavailable);
        assert!(parse_external_output("time_s=1").is_err());
    }

    #[test]
    fn trace_file_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.txt");
        let trace = PowerTrace::sampled(0.0, 2.0, 1e-3, |_| 1.0).unwrap();
        std::fs::write(&path, trace.to_text()).unwrap();
        let backend = BackendSpec::TraceFile {
            command: None,
            path: path.to_string_lossy().into_owned(),
        };
        let m = measure_via_backend(&backend, &inv(&[]));
        assert!(rel(m.energy_j.unwrap(), 2.0) < 1e-12);

        std::fs::write(&path, "0 1\n0 2\n").unwrap();
        assert_eq!(measure_via_backend(&backend, &inv(&[])).status, Status::Unavailable);

        let missing = BackendSpec::TraceFile {
            command: None,
            path: dir.path().join("nope/trace.txt").to_string_lossy().into_owned(),
        };
        assert!(Device::new(missing).check_ready().is_err());
    }

    #[test]
    fn wall_clock_backend() {
        let m = measure_via_backend(&BackendSpec::WallClock { nominal_power_w: None }, &inv(&[]));
        assert!(m.is_ok());
        assert_eq!(m.energy_j, None);
        assert!(m.time_s.unwrap() >= 0.0);
        let m = measure_via_backend(&BackendSpec::WallClock { nominal_power_w: Some(2.0) }, &inv(&[]));
        assert!((m.energy_j.unwrap() - 2.0 * m.time_s.unwrap()).abs() < 1e-12);
        let mut failing = inv(&[]);
        failing.command = "exit 1".into();
        let m = measure_via_backend(&BackendSpec::WallClock { nominal_power_w: None }, &failing);
        assert_eq!(m.status, Status::Unavailable);
    }

    #[test]
    fn simulated_backend_levels() {
        let mut sim = SimulatedBackend::new(DeviceModel::constant(1.0), 0.1);
        sim.level_time.insert("O1".into(), 0.5);
        let base = measure_via_backend(&BackendSpec::Simulated(sim.clone()), &inv(&[]));
        assert!((base.time_s.unwrap() - 0.05).abs() < 1e-12);
        assert!((base.avg_power_w.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backend_spec_serde_is_tagged() {
        let b = BackendSpec::External {
            command: "meter".into(),
            probe: None,
        };
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.starts_with(r#"{"kind":"external""#));
        let back: BackendSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("/tmp/a.out"), "/tmp/a.out");
        assert_eq!(shell_quote("it's here"), r"'it'\''s here'");
    }
}
