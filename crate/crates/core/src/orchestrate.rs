//! Compile-execute-measure campaigns.
//!
//! A [`Plan`] turns design rows (or level sweeps, toggles, exhaustive
//! combinations) into [`RunSpec`]s with content-derived run ids. Campaigns
//! compile specs in parallel, measure them one at a time through a
//! [`Device`], and append every replicate to a [`ResultStore`]. Rerunning a
//! campaign against the same store skips whatever is already recorded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::design::{full_factorial, DesignError, DesignMatrix};
use crate::measure::{
    run_shell, shell_quote, BackendSpec, Device, Measurement, RunInvocation, Status,
};
use crate::stats::{Metric, ResponseSet, StatsError};

/// Largest flag set accepted by [`exhaustive_plan`].
pub const MAX_EXHAUSTIVE_FLAGS: usize = 12;

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("design has {design} factors but the experiment declares {experiment}")]
    FactorMismatch { design: usize, experiment: usize },
    #[error("cannot read source {path}: {source}")]
    Source {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("result store {path}: {msg}")]
    Store { path: PathBuf, msg: String },
    #[error("baseline level {0} is unavailable; nothing to compare against")]
    BaselineUnavailable(String),
    #[error("exhaustive enumeration takes at most {MAX_EXHAUSTIVE_FLAGS} flags, got {0}")]
    TooManyFlags(usize),
    #[error("campaign paused after {written} new record(s): {reason}")]
    Paused { reason: String, written: usize },
    #[error("metric {0} is not available from this backend")]
    MetricUnavailable(Metric),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An on/off compiler option and how to spell each state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagFactor {
    pub name: String,
    pub enable: String,
    pub disable: String,
}

impl FlagFactor {
    /// GCC-style spellings: `-f<name>` / `-fno-<name>`.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        FlagFactor {
            enable: format!("-f{name}"),
            disable: format!("-fno-{name}"),
            name,
        }
    }

    pub fn with_spellings(
        name: impl Into<String>,
        enable: impl Into<String>,
        disable: impl Into<String>,
    ) -> Result<Self, OrchestrateError> {
        let f = FlagFactor {
            name: name.into(),
            enable: enable.into(),
            disable: disable.into(),
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<(), OrchestrateError> {
        if self.name.is_empty() || self.enable.trim().is_empty() || self.disable.trim().is_empty() {
            return Err(OrchestrateError::Invalid(format!("flag {:?} has an empty spelling", self.name)));
        }
        if self.enable == self.disable {
            return Err(OrchestrateError::Invalid(format!(
                "flag {:?} uses {:?} for both states",
                self.name, self.enable
            )));
        }
        Ok(())
    }

    pub fn spelling(&self, level: i8) -> &str {
        if level > 0 {
            &self.enable
        } else {
            &self.disable
        }
    }
}

/// How binaries are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompilerSpec {
    /// Shell template with `{flags}`, `{src}` and `{out}` placeholders.
    Command { template: String },
    /// Writes a stub artifact; "crashes" when any listed flag is present.
    Simulated {
        #[serde(default)]
        fail_on: Vec<String>,
    },
}

impl CompilerSpec {
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("compiler spec serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunOrder {
    /// Seeded shuffle, decoupling run order from drift.
    #[default]
    Random,
    /// Design order.
    Design,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub benchmark: String,
    pub compiler: CompilerSpec,
    /// Run command template; `{bin}` is the built artifact.
    pub run_template: String,
    pub sources: Vec<PathBuf>,
    pub base_level: String,
    /// Appended to `-O3` when the level is `O4`.
    pub lto_flag: String,
    pub factors: Vec<FlagFactor>,
    pub replicates: u32,
    pub backend: BackendSpec,
    pub seed: u64,
    pub order: RunOrder,
    pub cache_dir: PathBuf,
    /// Parallel compilations.
    pub jobs: usize,
}

impl Experiment {
    pub fn new(compiler: CompilerSpec, backend: BackendSpec, cache_dir: impl Into<PathBuf>) -> Self {
        Experiment {
            benchmark: "benchmark".into(),
            compiler,
            run_template: "{bin}".into(),
            sources: Vec::new(),
            base_level: "-O1".into(),
            lto_flag: "-flto".into(),
            factors: Vec::new(),
            replicates: 8,
            backend,
            seed: 0,
            order: RunOrder::Random,
            cache_dir: cache_dir.into(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), OrchestrateError> {
        if self.replicates == 0 {
            return Err(OrchestrateError::Invalid("replicates must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(OrchestrateError::Invalid("jobs must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.factors {
            f.validate()?;
            if !seen.insert(f.name.as_str()) {
                return Err(OrchestrateError::Invalid(format!("duplicate factor {:?}", f.name)));
            }
        }
        if let CompilerSpec::Command { template } = &self.compiler {
            if !template.contains("{out}") {
                return Err(OrchestrateError::Invalid("compiler template lacks {out}".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the contents of every source file, in order.
    pub fn source_digest(&self) -> Result<String, OrchestrateError> {
        let mut h = Sha256::new();
        for path in &self.sources {
            let bytes = fs::read(path).map_err(|source| OrchestrateError::Source {
                path: path.clone(),
                source,
            })?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    fn spec(
        &self,
        digest: &str,
        index: usize,
        label: String,
        opt_level: &str,
        toggles: &[(&FlagFactor, i8)],
    ) -> RunSpec {
        let mut flags = expand_level(opt_level, &self.lto_flag);
        let mut levels = BTreeMap::new();
        for (f, level) in toggles {
            flags.push(f.spelling(*level).to_string());
            levels.insert(f.name.clone(), *level);
        }
        let run_id = run_id(
            &self.compiler.fingerprint(),
            &flags.join(" "),
            digest,
            &self.backend.fingerprint(),
        );
        RunSpec {
            index,
            label,
            opt_level: opt_level.to_string(),
            flags,
            levels,
            run_id,
        }
    }
}

/// Compiler flags for an optimisation level: `O2` or `-O2` → `-O2`,
/// `O4` → `-O3` plus the link-time-optimisation flag(s).
pub fn expand_level(level: &str, lto_flag: &str) -> Vec<String> {
    let bare = level.trim().trim_start_matches('-');
    match bare {
        "" => Vec::new(),
        "O4" => std::iter::once("-O3".to_string())
            .chain(lto_flag.split_whitespace().map(str::to_string))
            .collect(),
        other => vec![format!("-{other}")],
    }
}

/// Stable id over everything that determines a build and its measurement.
pub fn run_id(compiler: &str, flag_string: &str, source_digest: &str, backend: &str) -> String {
    let mut h = Sha256::new();
    for part in [compiler, flag_string, source_digest, backend] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    /// Position in report order (the design row for factorial plans).
    pub index: usize,
    pub label: String,
    pub opt_level: String,
    pub flags: Vec<String>,
    /// Factor levels this build sets; factors not listed stay at the level default.
    pub levels: BTreeMap<String, i8>,
    pub run_id: String,
}

impl RunSpec {
    pub fn flag_string(&self) -> String {
        self.flags.join(" ")
    }
}

/// Specs in report order plus the order to execute them in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub specs: Vec<RunSpec>,
    /// A permutation of `0..specs.len()`.
    pub order: Vec<usize>,
}

impl Plan {
    fn ordered(specs: Vec<RunSpec>, policy: RunOrder, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..specs.len()).collect();
        if policy == RunOrder::Random {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Plan { specs, order }
    }

    pub fn by_run_id(&self) -> HashMap<&str, usize> {
        self.specs.iter().map(|s| (s.run_id.as_str(), s.index)).collect()
    }
}

/// One spec per design row: the base level followed by each factor's
/// spelling for that row, in declared factor order.
pub fn plan_runs(e: &Experiment, d: &DesignMatrix) -> Result<Plan, OrchestrateError> {
    e.validate()?;
    if d.n_factors() != e.factors.len() {
        return Err(OrchestrateError::FactorMismatch {
            design: d.n_factors(),
            experiment: e.factors.len(),
        });
    }
    let digest = e.source_digest()?;
    let specs = (0..d.n_runs())
        .map(|run| {
            let toggles: Vec<(&FlagFactor, i8)> = e.factors.iter().zip(d.row(run).iter().copied()).collect();
            e.spec(&digest, run, format!("run {run}"), &e.base_level, &toggles)
        })
        .collect();
    Ok(Plan::ordered(specs, e.order, e.seed))
}

/// All `2^m` enable/disable combinations of `flags` over `base_level`, in
/// standard order (first flag alternating fastest), followed by the plain
/// base build at index `2^m`.
pub fn exhaustive_plan(
    e: &Experiment,
    base_level: &str,
    flags: &[FlagFactor],
) -> Result<(DesignMatrix, Plan), OrchestrateError> {
    if flags.is_empty() {
        return Err(OrchestrateError::Invalid("exhaustive enumeration needs at least one flag".into()));
    }
    if flags.len() > MAX_EXHAUSTIVE_FLAGS {
        return Err(OrchestrateError::TooManyFlags(flags.len()));
    }
    let mut sub = e.clone();
    sub.factors = flags.to_vec();
    sub.base_level = base_level.to_string();
    sub.validate()?;
    let d = full_factorial(flags.len())?.with_names(flags.iter().map(|f| f.name.clone()).collect())?;
    let mut plan = plan_runs(&sub, &d)?;
    let digest = sub.source_digest()?;
    let base_index = plan.specs.len();
    plan.specs
        .push(sub.spec(&digest, base_index, format!("{base_level} (base)"), base_level, &[]));
    plan.order.push(base_index);
    Ok((d, plan))
}

/// Plain builds at each level; index follows `levels`.
pub fn level_plan(e: &Experiment, levels: &[String]) -> Result<Plan, OrchestrateError> {
    e.validate()?;
    if levels.is_empty() {
        return Err(OrchestrateError::Invalid("level sweep needs at least one level".into()));
    }
    let digest = e.source_digest()?;
    let specs = levels
        .iter()
        .enumerate()
        .map(|(i, l)| e.spec(&digest, i, l.clone(), l, &[]))
        .collect();
    Ok(Plan::ordered(specs, e.order, e.seed))
}

/// Base build (index 0), then `base+enable` and `base+disable` for each flag.
pub fn toggle_plan(e: &Experiment, base_level: &str, flags: &[FlagFactor]) -> Result<Plan, OrchestrateError> {
    e.validate()?;
    if flags.is_empty() {
        return Err(OrchestrateError::Invalid("one-at-a-time needs at least one flag".into()));
    }
    let digest = e.source_digest()?;
    let mut specs = vec![e.spec(&digest, 0, base_level.to_string(), base_level, &[])];
    for f in flags {
        f.validate()?;
        for level in [1i8, -1] {
            let index = specs.len();
            specs.push(e.spec(&digest, index, f.spelling(level).to_string(), base_level, &[(f, level)]));
        }
    }
    Ok(Plan::ordered(specs, e.order, e.seed))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompileOutcome {
    Built { artifact: PathBuf, cached: bool },
    Unavailable { diagnostics: String },
}

/// Compiles specs into a content-addressed cache (`<cache>/<run id>/bin`).
#[derive(Debug)]
pub struct Builder<'a> {
    exp: &'a Experiment,
    invocations: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl<'a> Builder<'a> {
    pub fn new(exp: &'a Experiment) -> Self {
        Builder {
            exp,
            invocations: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    /// Compiler invocations so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn artifact_path(&self, spec: &RunSpec) -> PathBuf {
        self.exp.cache_dir.join(&spec.run_id).join("bin")
    }

    pub fn compile(&self, spec: &RunSpec) -> CompileOutcome {
        let artifact = self.artifact_path(spec);
        if artifact.is_file() {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return CompileOutcome::Built { artifact, cached: true };
        }
        let dir = artifact.parent().expect("artifact has a parent").to_path_buf();
        if let Err(e) = fs::create_dir_all(&dir) {
            return CompileOutcome::Unavailable {
                diagnostics: format!("cannot create {}: {e}", dir.display()),
            };
        }
        let partial = dir.join("bin.partial");
        let _ = fs::remove_file(&partial);
        self.invocations.fetch_add(1, Ordering::Relaxed);

        let result = match &self.exp.compiler {
            CompilerSpec::Command { template } => {
                let flags: Vec<String> = spec.flags.iter().map(|f| shell_quote(f)).collect();
                let srcs: Vec<String> =
                    self.exp.sources.iter().map(|s| shell_quote(&s.to_string_lossy())).collect();
                let cmd = template
                    .replace("{flags}", &flags.join(" "))
                    .replace("{src}", &srcs.join(" "))
                    .replace("{out}", &shell_quote(&partial.to_string_lossy()));
                match run_shell(&cmd, None) {
                    Ok(out) if out.success && partial.is_file() => Ok(()),
                    Ok(out) if out.success => Err(format!("compiler succeeded but produced no output\n{}", out.stderr)),
                    Ok(out) => Err(format!(
                        "compiler exited with {}\n{}",
                        out.code.map_or("signal".into(), |c| c.to_string()),
                        out.stderr
                    )),
                    Err(e) => Err(format!("cannot start compiler: {e}")),
                }
            }
            CompilerSpec::Simulated { fail_on } => {
                match spec.flags.iter().find(|f| fail_on.contains(f)) {
                    Some(flag) => Err(format!("internal compiler error while building with {flag}")),
                    None => fs::write(&partial, spec.flag_string()).map_err(|e| e.to_string()),
                }
            }
        };
        match result.and_then(|()| fs::rename(&partial, &artifact).map_err(|e| e.to_string())) {
            Ok(()) => CompileOutcome::Built { artifact, cached: false },
            Err(diagnostics) => {
                let _ = fs::remove_file(&partial);
                let _ = fs::write(dir.join("diagnostics.txt"), &diagnostics);
                CompileOutcome::Unavailable { diagnostics }
            }
        }
    }
}

/// One measured (or unavailable) replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub run_index: usize,
    pub label: String,
    pub flags: String,
    pub replicate: u32,
    pub measurement: Measurement,
    /// Unix time in milliseconds.
    pub started_at: u64,
    pub finished_at: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Append-only newline-delimited JSON store of [`RunRecord`]s.
///
/// One writer at a time; [`ResultStore::read`] may run concurrently and
/// ignores a torn final line.
#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    records: Vec<RunRecord>,
    keys: HashSet<(String, u32)>,
}

impl ResultStore {
    /// Opens (creating if needed) and loads a store. A torn final line left by
    /// a crash mid-append is truncated away.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, OrchestrateError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        if path.exists() {
            let bytes = fs::read(&path)?;
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
            }
        } else {
            File::create(&path)?;
        }
        let records = Self::read(&path)?;
        let keys = records.iter().map(|r| (r.run_id.clone(), r.replicate)).collect();
        Ok(ResultStore { path, records, keys })
    }

    /// Reads every complete record.
    pub fn read(path: &Path) -> Result<Vec<RunRecord>, OrchestrateError> {
        let file = File::open(path)?;
        let mut out = Vec::new();
        let mut lines = BufReader::new(file).lines().enumerate().peekable();
        while let Some((i, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RunRecord>(&line) {
                Ok(r) => out.push(r),
                // a partially written last line is tolerated
                Err(_) if lines.peek().is_none() => break,
                Err(e) => {
                    return Err(OrchestrateError::Store {
                        path: path.to_path_buf(),
                        msg: format!("line {}: {e}", i + 1),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, run_id: &str, replicate: u32) -> bool {
        self.keys.contains(&(run_id.to_string(), replicate))
    }

    /// Appends and syncs one record.
    pub fn append(&mut self, record: RunRecord) -> Result<(), OrchestrateError> {
        let mut line = serde_json::to_string(&record).map_err(|e| OrchestrateError::Store {
            path: self.path.clone(),
            msg: e.to_string(),
        })?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.keys.insert((record.run_id.clone(), record.replicate));
        self.records.push(record);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CampaignOptions {
    /// Stop (as if interrupted) after this many new records.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CampaignStatus {
    Completed,
    Paused { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignSummary {
    pub status: CampaignStatus,
    pub new_records: usize,
    pub skipped: usize,
    pub compilations: usize,
    pub cache_hits: usize,
    pub measurements: usize,
    /// Labels of specs whose build failed.
    pub unavailable: Vec<String>,
}

impl CampaignSummary {
    pub fn is_complete(&self) -> bool {
        self.status == CampaignStatus::Completed
    }

    fn into_result(self) -> Result<Self, OrchestrateError> {
        match &self.status {
            CampaignStatus::Completed => Ok(self),
            CampaignStatus::Paused { reason } => Err(OrchestrateError::Paused {
                reason: reason.clone(),
                written: self.new_records,
            }),
        }
    }
}

fn invocation(e: &Experiment, spec: &RunSpec, bin: &Path, replicate: u32) -> RunInvocation {
    RunInvocation {
        command: e
            .run_template
            .replace("{bin}", &shell_quote(&bin.to_string_lossy()))
            .replace("{flags}", &spec.flag_string()),
        bin: bin.to_path_buf(),
        run_id: spec.run_id.clone(),
        replicate,
        opt_level: spec.opt_level.clone(),
        levels: spec.levels.clone(),
    }
}

/// Runs every missing replicate of `plan` in execution order, appending each
/// record as soon as it is measured.
pub fn execute_campaign(
    e: &Experiment,
    plan: &Plan,
    store: &mut ResultStore,
    opts: &CampaignOptions,
) -> Result<CampaignSummary, OrchestrateError> {
    e.validate()?;
    let builder = Builder::new(e);
    let missing = |spec: &RunSpec| (0..e.replicates).any(|r| !store.contains(&spec.run_id, r));
    let pending: Vec<usize> = plan.order.iter().copied().filter(|&i| missing(&plan.specs[i])).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(e.jobs)
        .build()
        .map_err(|err| OrchestrateError::Invalid(err.to_string()))?;
    let outcomes: HashMap<usize, CompileOutcome> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| (i, builder.compile(&plan.specs[i])))
            .collect()
    });

    let mut device = Device::new(e.backend.clone());
    let mut summary = CampaignSummary {
        status: CampaignStatus::Completed,
        new_records: 0,
        skipped: 0,
        compilations: builder.invocations(),
        cache_hits: builder.cache_hits(),
        measurements: 0,
        unavailable: Vec::new(),
    };
    for &i in &plan.order {
        let spec = &plan.specs[i];
        let outcome = outcomes.get(&i);
        if let Some(CompileOutcome::Unavailable { .. }) = outcome {
            summary.unavailable.push(spec.label.clone());
        }
        for rep in 0..e.replicates {
            if store.contains(&spec.run_id, rep) {
                summary.skipped += 1;
                continue;
            }
            if opts.stop_after.is_some_and(|n| summary.new_records >= n) {
                summary.status = CampaignStatus::Paused {
                    reason: format!("stopped after {} records", summary.new_records),
                };
                return Ok(summary);
            }
            let started_at = now_ms();
            let measurement = match outcome {
                Some(CompileOutcome::Built { artifact, .. }) => {
                    if let Err(err) = device.check_ready() {
                        summary.status = CampaignStatus::Paused { reason: err.to_string() };
                        return Ok(summary);
                    }
                    summary.measurements += 1;
                    device.measure(&invocation(e, spec, artifact, rep))
                }
                Some(CompileOutcome::Unavailable { diagnostics }) => {
                    Measurement::unavailable(format!("build failed: {}", first_line(diagnostics)))
                }
                None => unreachable!("every spec with missing replicates was compiled"),
            };
            store.append(RunRecord {
                run_id: spec.run_id.clone(),
                run_index: spec.index,
                label: spec.label.clone(),
                flags: spec.flag_string(),
                replicate: rep,
                measurement,
                started_at,
                finished_at: now_ms(),
            })?;
            summary.new_records += 1;
        }
    }
    Ok(summary)
}

fn first_line(s: &str) -> &str {
    s.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

/// Per-spec replicate values of `metric`, indexed like `plan.specs`.
/// A spec with no usable replicate is `None`.
pub fn collect_values(plan: &Plan, records: &[RunRecord], metric: Metric) -> Vec<Option<Vec<f64>>> {
    let ids = plan.by_run_id();
    let mut per_spec: Vec<Vec<f64>> = vec![Vec::new(); plan.specs.len()];
    for r in records {
        if let Some(&idx) = ids.get(r.run_id.as_str()) {
            if let Some(v) = r.measurement.value(metric) {
                per_spec[idx].push(v);
            }
        }
    }
    per_spec.into_iter().map(|v| (!v.is_empty()).then_some(v)).collect()
}

/// Responses for a factorial plan, aligned with the design rows.
pub fn collect_responses(
    plan: &Plan,
    d: &DesignMatrix,
    records: &[RunRecord],
    metric: Metric,
) -> Result<ResponseSet, OrchestrateError> {
    let mut values = collect_values(plan, records, metric);
    values.truncate(d.n_runs());
    let any_ok = records.iter().any(|r| r.measurement.status == Status::Ok);
    if any_ok && values.iter().all(Option::is_none) {
        return Err(OrchestrateError::MetricUnavailable(metric));
    }
    Ok(ResponseSet::new(metric, values)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean energy, time and power of one build; `None` where unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Means {
    pub energy_j: Option<f64>,
    pub time_s: Option<f64>,
    pub power_w: Option<f64>,
}

impl Means {
    fn of(plan: &Plan, records: &[RunRecord], index: usize) -> Self {
        let get = |m: Metric| collect_values(plan, records, m)[index].as_deref().map(mean);
        Means {
            energy_j: get(Metric::Energy),
            time_s: get(Metric::Time),
            power_w: get(Metric::Power),
        }
    }

    pub fn is_available(&self) -> bool {
        self.time_s.is_some()
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Energy => self.energy_j,
            Metric::Time => self.time_s,
            Metric::Power => self.power_w,
        }
    }
}

fn ratio(x: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (x, base) {
        (Some(x), Some(b)) if b != 0.0 => Some(x / b),
        _ => None,
    }
}

fn percent(x: Option<f64>, base: Option<f64>) -> Option<f64> {
    ratio(x, base).map(|r| 100.0 * (r - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: String,
    pub means: Means,
    pub energy_ratio: Option<f64>,
    pub time_ratio: Option<f64>,
    pub power_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: CampaignSummary,
}

/// Builds and measures each level; ratios are relative to the first level.
pub fn level_sweep(
    e: &Experiment,
    levels: &[String],
    store: &mut ResultStore,
    opts: &CampaignOptions,
) -> Result<SweepReport, OrchestrateError> {
    let plan = level_plan(e, levels)?;
    let summary = execute_campaign(e, &plan, store, opts)?.into_result()?;
    let means: Vec<Means> = (0..plan.specs.len()).map(|i| Means::of(&plan, store.records(), i)).collect();
    let base = means[0];
    if !base.is_available() {
        return Err(OrchestrateError::BaselineUnavailable(levels[0].clone()));
    }
    let rows = levels
        .iter()
        .zip(means)
        .map(|(level, m)| SweepRow {
            level: level.clone(),
            energy_ratio: ratio(m.energy_j, base.energy_j),
            time_ratio: ratio(m.time_s, base.time_s),
            power_ratio: ratio(m.power_w, base.power_w),
            means: m,
        })
        .collect();
    Ok(SweepReport { rows, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToggleRow {
    pub flag: FlagFactor,
    pub enabled: Means,
    pub disabled: Means,
    /// Percent change vs the plain base build.
    pub enabled_energy_pct: Option<f64>,
    pub enabled_time_pct: Option<f64>,
    pub disabled_energy_pct: Option<f64>,
    pub disabled_time_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToggleReport {
    pub base_level: String,
    pub base: Means,
    pub rows: Vec<ToggleRow>,
    pub summary: CampaignSummary,
}

/// Enables and disables each flag individually on top of `base_level`.
pub fn one_at_a_time(
    e: &Experiment,
    base_level: &str,
    flags: &[FlagFactor],
    store: &mut ResultStore,
    opts: &CampaignOptions,
) -> Result<ToggleReport, OrchestrateError> {
    let plan = toggle_plan(e, base_level, flags)?;
    let summary = execute_campaign(e, &plan, store, opts)?.into_result()?;
    let recs = store.records();
    let base = Means::of(&plan, recs, 0);
    if !base.is_available() {
        return Err(OrchestrateError::BaselineUnavailable(base_level.to_string()));
    }
    let rows = flags
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let enabled = Means::of(&plan, recs, 1 + 2 * i);
            let disabled = Means::of(&plan, recs, 2 + 2 * i);
            ToggleRow {
                flag: f.clone(),
                enabled_energy_pct: percent(enabled.energy_j, base.energy_j),
                enabled_time_pct: percent(enabled.time_s, base.time_s),
                disabled_energy_pct: percent(disabled.energy_j, base.energy_j),
                disabled_time_pct: percent(disabled.time_s, base.time_s),
                enabled,
                disabled,
            }
        })
        .collect();
    Ok(ToggleReport {
        base_level: base_level.to_string(),
        base,
        rows,
        summary,
    })
}
