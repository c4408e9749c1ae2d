//! The `flagdoe` command line.
//!
//! Exit status: 0 on success, 1 on a usage or configuration error, 2 when a
//! campaign paused at a checkpoint (rerun the same command to resume).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{self, Config, Loaded};
use crate::design::{
    alias_structure, default_factor_names, generate_fractional, DesignMatrix, Resolution,
};
use crate::measure::BackendSpec;
use crate::orchestrate::{
    collect_responses, collect_values, exhaustive_plan, execute_campaign, level_sweep, one_at_a_time,
    plan_runs, CampaignOptions, CampaignStatus, CampaignSummary, CompilerSpec, Experiment,
    OrchestrateError, Plan, ResultStore,
};
use crate::report::{
    render_exhaustive, render_main_effects, render_sweep, render_toggles, render_top_flags,
    ReportBundle, ReportMeta, TopFlags,
};
use crate::stats::{analyze_design, rank_top_flags, write_effects_csv, Analysis, Metric};

#[derive(Debug, Parser)]
#[command(name = "flagdoe", version, about = "Factorial experiments over compiler flags")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "flagdoe-out")]
    pub out: PathBuf,
    /// Overrides campaign.seed (and the simulated device seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config override, e.g. `--set campaign.replicates=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Response analysed: energy, time or power.
    #[arg(long, global = true)]
    pub metric: Option<Metric>,
    /// Significance level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a fractional factorial design and its alias report.
    Design {
        /// Number of factors (defaults to the configured flag count).
        #[arg(long)]
        factors: Option<usize>,
        #[arg(long)]
        resolution: Option<Resolution>,
        #[arg(long)]
        max_runs: Option<usize>,
    },
    /// Compile and measure every design row; resumable.
    Run {
        /// Pause after this many new records.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Main effects and significance from the result store.
    Analyze,
    /// Measure each optimisation level against the first.
    Sweep {
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Toggle each flag alone on top of the base level.
    Oneshot {
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Every combination of the exhaustive flag set.
    Exhaustive {
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Design, campaign and analysis on the simulated device.
    Simulate,
    /// Render tables for the configured experiment plus earlier analyses.
    Report {
        /// Output directories of earlier `analyze`/`simulate` runs to fold
        /// into the top-flags table.
        #[arg(long)]
        include: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Design { .. } => "design",
            Command::Run { .. } => "run",
            Command::Analyze => "analyze",
            Command::Sweep { .. } => "sweep",
            Command::Oneshot { .. } => "oneshot",
            Command::Exhaustive { .. } => "exhaustive",
            Command::Simulate => "simulate",
            Command::Report { .. } => "report",
        }
    }
}

/// Written next to every subcommand's outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub config_digest: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

/// Parses arguments, runs the subcommand and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => match err.downcast_ref::<OrchestrateError>() {
            Some(OrchestrateError::Paused { .. }) => {
                eprintln!("paused: {err}; rerun the same command to resume");
                2
            }
            _ => {
                eprintln!("error: {err:#}");
                1
            }
        },
    }
}

struct Session {
    loaded: Loaded,
    config_path: Option<PathBuf>,
    out: PathBuf,
    outputs: Vec<String>,
}

impl Session {
    fn open(common: &Common) -> Result<Self> {
        let mut overrides = common.overrides.clone();
        if let Some(seed) = common.seed {
            overrides.push(format!("campaign.seed={seed}"));
        }
        if let Some(m) = common.metric {
            overrides.push(format!("campaign.metric=\"{m}\""));
        }
        if let Some(a) = common.alpha {
            overrides.push(format!("campaign.alpha={a:?}"));
        }
        let mut loaded = config::load(common.config.as_deref(), &overrides)?;
        if let (Some(seed), Some(BackendSpec::Simulated(sim))) = (common.seed, loaded.config.backend.as_mut()) {
            sim.model.seed = seed;
        }
        fs::create_dir_all(&common.out).with_context(|| format!("cannot create {}", common.out.display()))?;
        Ok(Session {
            loaded,
            config_path: common.config.clone(),
            out: common.out.clone(),
            outputs: Vec::new(),
        })
    }

    fn config(&self) -> &Config {
        &self.loaded.config
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn experiment(&self) -> Result<Experiment> {
        Ok(self.config().experiment(&self.loaded.base_dir, &self.out)?)
    }

    fn store(&self) -> Result<ResultStore> {
        Ok(ResultStore::open(self.config().store_path(&self.loaded.base_dir, &self.out))?)
    }

    fn finish(&mut self, subcommand: &str) -> Result<()> {
        let m = Manifest {
            tool: "flagdoe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config: self.config_path.clone(),
            config_digest: self.loaded.digest.clone(),
            seed: self.config().campaign.seed,
            outputs: self.outputs.clone(),
        };
        let json = serde_json::to_string_pretty(&m)? + "\n";
        let name = format!("manifest-{subcommand}.json");
        fs::write(self.out.join(&name), json).with_context(|| format!("cannot write {name}"))?;
        Ok(())
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let mut s = Session::open(&cli.common)?;
    let result = match &cli.command {
        Command::Design {
            factors,
            resolution,
            max_runs,
        } => cmd_design(&mut s, *factors, *resolution, *max_runs),
        Command::Run { stop_after } => cmd_run(&mut s, *stop_after),
        Command::Analyze => cmd_analyze(&mut s),
        Command::Sweep { stop_after } => cmd_sweep(&mut s, *stop_after),
        Command::Oneshot { stop_after } => cmd_oneshot(&mut s, *stop_after),
        Command::Exhaustive { stop_after } => cmd_exhaustive(&mut s, *stop_after),
        Command::Simulate => cmd_simulate(&mut s),
        Command::Report { include } => cmd_report(&mut s, include),
    };
    // a paused campaign still leaves a manifest behind
    s.finish(cli.command.name())?;
    result
}

fn configured_design(cfg: &Config) -> Result<DesignMatrix> {
    let names = cfg.flag_names()?;
    if names.is_empty() {
        bail!("factors.flags: no flags configured");
    }
    let d = generate_fractional(names.len(), cfg.resolution()?, cfg.factors.max_runs)?;
    Ok(d.with_names(names)?)
}

fn cmd_design(s: &mut Session, factors: Option<usize>, resolution: Option<Resolution>, max_runs: Option<usize>) -> Result<()> {
    let cfg = s.config();
    let names = match factors {
        Some(n) => default_factor_names(n),
        None if !cfg.factors.flags.is_empty() => cfg.flag_names()?,
        None => bail!("pass --factors or configure factors.flags"),
    };
    let target = match resolution {
        Some(r) => r,
        None => cfg.resolution()?,
    };
    let d = generate_fractional(names.len(), target, max_runs.unwrap_or(cfg.factors.max_runs))?.with_names(names)?;
    let aliases = alias_structure(&d, 3)?;
    s.write("design.csv", d.to_csv_string())?;
    s.write("aliases.txt", aliases.to_string())?;
    println!("{} factors, {} runs, resolution {}", d.n_factors(), d.n_runs(), d.resolution());
    for g in d.generator_labels() {
        println!("generator {g}");
    }
    Ok(())
}

fn print_summary(sum: &CampaignSummary) {
    println!(
        "records: {} new, {} already stored; compilations: {} ({} cached); measurements: {}",
        sum.new_records, sum.skipped, sum.compilations, sum.cache_hits, sum.measurements
    );
    if !sum.unavailable.is_empty() {
        println!("unavailable builds: {}", sum.unavailable.join(", "));
    }
}

fn paused(sum: &CampaignSummary) -> Result<()> {
    match &sum.status {
        CampaignStatus::Completed => Ok(()),
        CampaignStatus::Paused { reason } => Err(OrchestrateError::Paused {
            reason: reason.clone(),
            written: sum.new_records,
        }
        .into()),
    }
}

fn run_design_campaign(s: &mut Session, exp: &Experiment, stop_after: Option<usize>) -> Result<(DesignMatrix, Plan, ResultStore)> {
    let d = configured_design(s.config())?;
    let plan = plan_runs(exp, &d)?;
    s.write("design.csv", d.to_csv_string())?;
    let mut store = s.store()?;
    let sum = execute_campaign(exp, &plan, &mut store, &CampaignOptions { stop_after })?;
    print_summary(&sum);
    paused(&sum)?;
    Ok((d, plan, store))
}

fn cmd_run(s: &mut Session, stop_after: Option<usize>) -> Result<()> {
    let exp = s.experiment()?;
    run_design_campaign(s, &exp, stop_after)?;
    Ok(())
}

/// Analyses for the configured metric first, then any other metric the
/// store has values for.
fn analyses(cfg: &Config, d: &DesignMatrix, plan: &Plan, store: &ResultStore) -> Result<Vec<Analysis>> {
    let tc = cfg.test_config()?;
    let primary = cfg.campaign.metric;
    let mut out = Vec::new();
    for m in std::iter::once(primary).chain(Metric::ALL.into_iter().filter(|&m| m != primary)) {
        let r = match collect_responses(plan, d, store.records(), m) {
            Ok(r) => r,
            Err(e) if m == primary => return Err(e.into()),
            Err(_) => continue,
        };
        if r.runs.iter().all(Option::is_none) {
            if m == primary {
                bail!("no usable {m} measurements in {}", store.path().display());
            }
            continue;
        }
        match analyze_design(d, &r, &tc) {
            Ok(a) => out.push(a),
            Err(e) if m == primary => return Err(e.into()),
            Err(_) => {}
        }
    }
    Ok(out)
}

fn write_analysis(s: &mut Session, d: &DesignMatrix, plan: &Plan, store: &ResultStore) -> Result<Vec<Analysis>> {
    let all = analyses(s.config(), d, plan, store)?;
    let lead = &all[0];
    let mut csv = Vec::new();
    write_effects_csv(&lead.estimates, &mut csv)?;
    s.write("effects.csv", csv)?;

    let mut ranked = lead.estimates.iter().filter(|e| e.significant).collect::<Vec<_>>();
    ranked.sort_by(|a, b| b.percent_effect.abs().total_cmp(&a.percent_effect.abs()).then_with(|| a.label.cmp(&b.label)));
    let sig: String = ranked.iter().map(|e| format!("{}\n", e.label)).collect();
    s.write("significant_flags.txt", sig)?;

    let cfg = s.config();
    let top = TopFlags {
        benchmark: cfg.benchmark.name.clone(),
        config: cfg.benchmark.platform.clone(),
        flags: rank_top_flags(&lead.estimates, cfg.campaign.top_k).into_iter().map(|e| e.label).collect(),
    };
    s.write("top_flags.json", serde_json::to_string_pretty(&top)? + "\n")?;

    let refs: Vec<&Analysis> = all.iter().collect();
    let me = render_main_effects(&refs);
    s.write("main_effects.txt", me.table.to_text())?;
    s.write("main_effects.csv", me.table.to_csv())?;
    s.write("main_effects_plot.csv", me.plot_data)?;
    println!(
        "{}: {} of {} flags significant at alpha = {}",
        lead.metric,
        ranked.len(),
        lead.estimates.len(),
        lead.alpha
    );
    for note in &lead.notes {
        println!("note: {note}");
    }
    Ok(all)
}

fn cmd_analyze(s: &mut Session) -> Result<()> {
    let exp = s.experiment()?;
    let d = configured_design(s.config())?;
    let plan = plan_runs(&exp, &d)?;
    let path = s.config().store_path(&s.loaded.base_dir, &s.out);
    if !path.exists() {
        bail!("no result store at {}; run the campaign first", path.display());
    }
    let store = s.store()?;
    write_analysis(s, &d, &plan, &store)?;
    Ok(())
}

fn cmd_simulate(s: &mut Session) -> Result<()> {
    if !matches!(s.config().backend, Some(BackendSpec::Simulated(_))) {
        bail!("backend.kind: simulate needs kind = \"simulated\"");
    }
    let mut exp = {
        let mut cfg = s.config().clone();
        if !matches!(cfg.compiler, Some(CompilerSpec::Simulated { .. })) {
            cfg.compiler = Some(CompilerSpec::Simulated { fail_on: Vec::new() });
        }
        cfg.experiment(&s.loaded.base_dir, &s.out)?
    };
    exp.sources.clear();
    let (d, plan, store) = run_design_campaign(s, &exp, None)?;
    write_analysis(s, &d, &plan, &store)?;
    Ok(())
}

fn cmd_sweep(s: &mut Session, stop_after: Option<usize>) -> Result<()> {
    let exp = s.experiment()?;
    let levels = s.config().factors.levels.clone();
    let mut store = s.store()?;
    let report = level_sweep(&exp, &levels, &mut store, &CampaignOptions { stop_after })?;
    print_summary(&report.summary);
    let t = render_sweep(&report);
    print!("{t}");
    s.write("sweep.txt", t.to_text())?;
    s.write("sweep.csv", t.to_csv())?;
    Ok(())
}

fn cmd_oneshot(s: &mut Session, stop_after: Option<usize>) -> Result<()> {
    let exp = s.experiment()?;
    let flags = s.config().flags()?;
    let base = s.config().factors.base_level.clone();
    let mut store = s.store()?;
    let report = one_at_a_time(&exp, &base, &flags, &mut store, &CampaignOptions { stop_after })?;
    print_summary(&report.summary);
    let t = render_toggles(&report);
    print!("{t}");
    s.write("oneshot.txt", t.to_text())?;
    s.write("oneshot.csv", t.to_csv())?;
    Ok(())
}

fn cmd_exhaustive(s: &mut Session, stop_after: Option<usize>) -> Result<()> {
    let exp = s.experiment()?;
    let mut flags = s.config().exhaustive_flags()?;
    if flags.is_empty() {
        flags = s.config().flags()?;
    }
    let base = s.config().factors.base_level.clone();
    let (d, plan) = exhaustive_plan(&exp, &base, &flags)?;
    let mut store = s.store()?;
    let sum = execute_campaign(&exp, &plan, &mut store, &CampaignOptions { stop_after })?;
    print_summary(&sum);
    paused(&sum)?;
    let means: Vec<Option<f64>> = collect_values(&plan, store.records(), Metric::Energy)
        .into_iter()
        .map(|v| v.map(|v| v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let Some(base_mean) = means[d.n_runs()] else {
        return Err(OrchestrateError::BaselineUnavailable(base).into());
    };
    let r = render_exhaustive(&d, &means[..d.n_runs()], base_mean);
    print!("{}", r.table);
    s.write("exhaustive.txt", r.table.to_text())?;
    s.write("exhaustive.csv", r.table.to_csv())?;
    Ok(())
}

fn cmd_report(s: &mut Session, include: &[PathBuf]) -> Result<()> {
    let mut bundle = ReportBundle::default();
    let cfg = s.config().clone();
    bundle.meta = ReportMeta {
        alpha: Some(cfg.campaign.alpha),
        resolution: None,
        seed: Some(cfg.campaign.seed),
        metrics: Vec::new(),
        notes: Vec::new(),
    };
    let mut tops = Vec::new();
    let store_path = cfg.store_path(&s.loaded.base_dir, &s.out);
    if cfg.compiler.is_some() && cfg.backend.is_some() && !cfg.factors.flags.is_empty() && store_path.exists() {
        let exp = s.experiment()?;
        let d = configured_design(&cfg)?;
        let plan = plan_runs(&exp, &d)?;
        let store = s.store()?;
        let all = analyses(&cfg, &d, &plan, &store)?;
        let refs: Vec<&Analysis> = all.iter().collect();
        let me = render_main_effects(&refs);
        bundle.meta.resolution = Some(d.resolution().to_string());
        bundle.meta.metrics = all.iter().map(|a| a.metric).collect();
        for a in &all {
            for r in &a.excluded_runs {
                bundle.meta.notes.push(format!("{}: run {r} unavailable", a.metric));
            }
        }
        bundle.add_table("main_effects", me.table);
        bundle.add_plot("main_effects_plot", me.plot_data);
        tops.push(TopFlags {
            benchmark: cfg.benchmark.name.clone(),
            config: cfg.benchmark.platform.clone(),
            flags: rank_top_flags(&all[0].estimates, cfg.campaign.top_k).into_iter().map(|e| e.label).collect(),
        });
    }
    for dir in include {
        tops.push(read_top_flags(dir)?);
    }
    if tops.is_empty() {
        bail!("nothing to report: no result store for this config and no --include directories");
    }
    let top = render_top_flags(&tops, cfg.campaign.top_k);
    bundle.add_table("top_flags_legend", top.legend_table());
    bundle.add_table("top_flags", top.table);
    if let Err(bad) = bundle.verify() {
        bail!("rendered tables disagree with their source values:\n{}", bad.join("\n"));
    }
    let dir = s.out.join("report");
    bundle.write_to(&dir)?;
    s.outputs.push("report/".into());
    print!("{}", bundle.to_text());
    Ok(())
}

fn read_top_flags(dir: &Path) -> Result<TopFlags> {
    let path = dir.join("top_flags.json");
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is malformed", path.display()))
}
