//! TOML experiment configuration.
//!
//! ```toml
//! [compiler]
//! kind = "command"
//! template = "gcc {flags} {src} -o {out}"
//!
//! [benchmark]
//! name = "blowfish"
//! sources = ["src/blowfish.c"]
//!
//! [factors]
//! flags = ["guess-branch-probability", "tree-dominator-opts"]
//!
//! [backend]
//! kind = "wall-clock"
//! ```
//!
//! Unknown keys are errors. Relative paths are taken relative to the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::design::{DesignError, Resolution};
use crate::measure::BackendSpec;
use crate::orchestrate::{CompilerSpec, Experiment, FlagFactor, OrchestrateError, RunOrder};
use crate::stats::{Metric, TestConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("--set {key}: {message}")]
    Override { key: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("config has no [{0}] section")]
    Missing(&'static str),
}

impl ConfigError {
    fn invalid(key: &str, message: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.to_string(),
        }
    }
}

/// A flag given either by name (GCC `-f`/`-fno-` spelling) or spelled out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagEntry {
    Name(String),
    Spelled {
        name: String,
        enable: String,
        disable: String,
    },
}

impl FlagEntry {
    pub fn to_factor(&self) -> Result<FlagFactor, OrchestrateError> {
        match self {
            FlagEntry::Name(n) => Ok(FlagFactor::new(n.as_str())),
            FlagEntry::Spelled { name, enable, disable } => {
                FlagFactor::with_spellings(name.as_str(), enable.as_str(), disable.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub name: String,
    /// Platform or configuration label, used as a column in top-flag tables.
    pub platform: String,
    pub sources: Vec<PathBuf>,
    /// Run command; `{bin}` is the built artifact.
    pub run: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            name: "benchmark".into(),
            platform: "default".into(),
            sources: Vec::new(),
            run: "{bin}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorsConfig {
    pub base_level: String,
    /// Extra flags for the `O4` level on top of `-O3`.
    pub lto_flag: String,
    pub flags: Vec<FlagEntry>,
    pub resolution: String,
    pub max_runs: usize,
    /// Levels for `sweep`; the first is the baseline.
    pub levels: Vec<String>,
    /// Flags for `exhaustive`; at most 12.
    pub exhaustive: Vec<FlagEntry>,
}

impl Default for FactorsConfig {
    fn default() -> Self {
        FactorsConfig {
            base_level: "O1".into(),
            lto_flag: "-flto".into(),
            flags: Vec::new(),
            resolution: "IV".into(),
            max_runs: 2048,
            levels: ["O0", "O1", "O2", "O3", "Os", "O4"].map(String::from).to_vec(),
            exhaustive: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub replicates: u32,
    pub seed: u64,
    pub order: RunOrder,
    pub jobs: usize,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Defaults to `<out>/results.jsonl`.
    pub store: Option<PathBuf>,
    pub alpha: f64,
    pub exact_threshold: usize,
    pub metric: Metric,
    /// Flags per benchmark kept for the top-flags table.
    pub top_k: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let t = TestConfig::default();
        CampaignConfig {
            replicates: 8,
            seed: 0,
            order: RunOrder::Random,
            jobs: 1,
            cache_dir: None,
            store: None,
            alpha: t.alpha,
            exact_threshold: t.exact_threshold,
            metric: Metric::Energy,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub compiler: Option<CompilerSpec>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub factors: FactorsConfig,
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub campaign: CampaignConfig,
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub config: Config,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
    /// SHA-256 of the effective config (after overrides).
    pub digest: String,
}

/// Reads `path` (or starts from defaults) and applies `key=value` overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Loaded, ConfigError> {
    let (mut table, base_dir) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            // typed parse straight from text so errors carry line numbers
            toml::from_str::<Config>(&text).map_err(|e| ConfigError::Parse {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
            let table: toml::Table = toml::from_str(&text).expect("already parsed");
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, dir)
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let config: Config = toml::Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| {
        ConfigError::Override {
            key: overrides.join(", "),
            message: e.message().to_string(),
        }
    })?;
    config.validate()?;
    let canonical = serde_json::to_string(&table).expect("toml table serializes as json");
    Ok(Loaded {
        config,
        base_dir,
        digest: hex::encode(Sha256::digest(canonical.as_bytes())),
    })
}

/// Parses one `section.key=value` override. The value is read as a TOML
/// value when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, ov: &str) -> Result<(), ConfigError> {
    let (key, raw) = ov.split_once('=').ok_or_else(|| ConfigError::Override {
        key: ov.to_string(),
        message: "expected key=value".into(),
    })?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override {
            key: key.to_string(),
            message: "empty key segment".into(),
        });
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.to_string(),
            message: format!("{p} is not a table"),
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Config {
    /// Parses and validates config text without override support.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolution()?;
        let c = &self.campaign;
        if c.replicates == 0 {
            return Err(ConfigError::invalid("campaign.replicates", "must be at least 1"));
        }
        if c.jobs == 0 {
            return Err(ConfigError::invalid("campaign.jobs", "must be at least 1"));
        }
        self.test_config()?;
        if self.factors.max_runs < 2 {
            return Err(ConfigError::invalid("factors.max_runs", "must be at least 2"));
        }
        self.flags()?;
        self.exhaustive_flags()?;
        if let Some(BackendSpec::Simulated(sim)) = &self.backend {
            sim.model.validate().map_err(|e| ConfigError::invalid("backend.model", e))?;
            if !(sim.base_duration > 0.0) {
                return Err(ConfigError::invalid("backend.base_duration", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn resolution(&self) -> Result<Resolution, ConfigError> {
        self.factors
            .resolution
            .parse()
            .map_err(|e| ConfigError::invalid("factors.resolution", e))
    }

    pub fn test_config(&self) -> Result<TestConfig, ConfigError> {
        let t = TestConfig {
            alpha: self.campaign.alpha,
            exact_threshold: self.campaign.exact_threshold,
        };
        t.validate().map_err(|e| ConfigError::invalid("campaign.alpha", e))?;
        Ok(t)
    }

    pub fn flags(&self) -> Result<Vec<FlagFactor>, ConfigError> {
        to_factors(&self.factors.flags, "factors.flags")
    }

    pub fn exhaustive_flags(&self) -> Result<Vec<FlagFactor>, ConfigError> {
        to_factors(&self.factors.exhaustive, "factors.exhaustive")
    }

    pub fn flag_names(&self) -> Result<Vec<String>, ConfigError> {
        Ok(self.flags()?.into_iter().map(|f| f.name).collect())
    }

    /// The campaign description, with paths resolved.
    pub fn experiment(&self, base_dir: &Path, out_dir: &Path) -> Result<Experiment, ConfigError> {
        let compiler = self.compiler.clone().ok_or(ConfigError::Missing("compiler"))?;
        let backend = self.backend.clone().ok_or(ConfigError::Missing("backend"))?;
        let c = &self.campaign;
        let cache = c.cache_dir.as_ref().map_or_else(|| out_dir.join("cache"), |p| base_dir.join(p));
        let mut e = Experiment::new(compiler, backend, cache);
        e.benchmark = self.benchmark.name.clone();
        e.run_template = self.benchmark.run.clone();
        e.sources = self.benchmark.sources.iter().map(|s| base_dir.join(s)).collect();
        e.base_level = self.factors.base_level.clone();
        e.lto_flag = self.factors.lto_flag.clone();
        e.factors = self.flags()?;
        e.replicates = c.replicates;
        e.seed = c.seed;
        e.order = c.order;
        e.jobs = c.jobs;
        e.validate().map_err(|err| ConfigError::invalid("config", err))?;
        Ok(e)
    }

    pub fn store_path(&self, base_dir: &Path, out_dir: &Path) -> PathBuf {
        self.campaign
            .store
            .as_ref()
            .map_or_else(|| out_dir.join("results.jsonl"), |p| base_dir.join(p))
    }
}

fn to_factors(entries: &[FlagEntry], key: &str) -> Result<Vec<FlagFactor>, ConfigError> {
    let mut out: Vec<FlagFactor> = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let f = entry.to_factor().map_err(|e| ConfigError::invalid(&format!("{key}[{i}]"), e))?;
        if out.iter().any(|g| g.name == f.name) {
            return Err(ConfigError::invalid(&format!("{key}[{i}]"), format!("duplicate flag {:?}", f.name)));
        }
        out.push(f);
    }
    Ok(out)
}

impl From<DesignError> for ConfigError {
    fn from(e: DesignError) -> Self {
        ConfigError::invalid("factors", e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[compiler]
kind = "simulated"

[benchmark]
name = "blowfish"
platform = "cortex-m3"

[factors]
flags = ["tree-ter", { name = "omit-fp", enable = "-fomit-frame-pointer", disable = "-fno-omit-frame-pointer" }]
resolution = "III"
max_runs = 4

[backend]
kind = "simulated"
base_duration = 0.05

[backend.model]
base_power = 1.0
noise = 0.005
effects = { "tree-ter" = -0.02 }

[campaign]
replicates = 4
seed = 9
"#;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flagdoe.toml");
        fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn parses_example() {
        let (_d, p) = write(EXAMPLE);
        let l = load(Some(&p), &[]).unwrap();
        assert_eq!(l.config.flag_names().unwrap(), ["tree-ter", "omit-fp"]);
        assert_eq!(l.config.flags().unwrap()[1].enable, "-fomit-frame-pointer");
        assert_eq!(l.config.resolution().unwrap(), Resolution::III);
        assert_eq!(l.config.campaign.replicates, 4);
        assert!(matches!(l.config.backend, Some(BackendSpec::Simulated(_))));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let (_d, p) = write("[campaign]\nreplicates = 2\nreplicatez = 3\n");
        let msg = load(Some(&p), &[]).unwrap_err().to_string();
        assert!(msg.contains("replicatez"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        let (_d, p) = write("[backend]\nkind = \"simulated\"\nbase_duration = 1.0\nmodel = { base_power = 1.0, nosie = 0.1 }\n");
        let msg = load(Some(&p), &[]).unwrap_err().to_string();
        assert!(msg.contains("nosie"), "{msg}");
    }

    #[test]
    fn overrides_apply_with_types() {
        let (_d, p) = write(EXAMPLE);
        let l = load(
            Some(&p),
            &["campaign.replicates=2".into(), "benchmark.name=sha".into(), "factors.levels=[\"O0\",\"O2\"]".into()],
        )
        .unwrap();
        assert_eq!(l.config.campaign.replicates, 2);
        assert_eq!(l.config.benchmark.name, "sha");
        assert_eq!(l.config.factors.levels, ["O0", "O2"]);
        assert_ne!(l.digest, load(Some(&p), &[]).unwrap().digest);
        let err = load(Some(&p), &["campaign.replicatez=2".into()]).unwrap_err().to_string();
        assert!(err.contains("replicatez"), "{err}");
        assert!(load(Some(&p), &["campaign.seed".into()]).is_err());
        assert!(load(Some(&p), &["benchmark.name.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_name_their_key() {
        let err = load(None, &["factors.resolution=VII".into()]).unwrap_err().to_string();
        assert!(err.starts_with("factors.resolution"), "{err}");
        let err = load(None, &["campaign.alpha=1.5".into()]).unwrap_err().to_string();
        assert!(err.starts_with("campaign.alpha"), "{err}");
        let err = load(None, &["factors.flags=[\"a\",\"a\"]".into()]).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let (d, p) = write("[compiler]\nkind=\"simulated\"\n[backend]\nkind=\"wall-clock\"\n[campaign]\nstore=\"r.jsonl\"\n");
        let l = load(Some(&p), &[]).unwrap();
        assert_eq!(l.config.store_path(&l.base_dir, Path::new("out")), d.path().join("r.jsonl"));
        let e = l.config.experiment(&l.base_dir, Path::new("out")).unwrap();
        assert_eq!(e.cache_dir, Path::new("out").join("cache"));
        assert!(matches!(
            Config::default().experiment(Path::new(""), Path::new("out")),
            Err(ConfigError::Missing("compiler"))
        ));
    }
}
