//! Experiment configuration: a TOML file with nested blocks, every field of
//! which can be overridden by `--set dotted.key=value`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use social_bandits::bayes::FiniteSupportPrior;
use social_bandits::montecarlo::{AxisSpec, SweepGrid};
use social_bandits::{BehaviorSpec, Estimator, Instance, McSettings, PopulationSpec};

use crate::error::{CliError, CliResult};

/// Environment variable consulted for the worker count when
/// `--parallelism` is absent.
pub const PARALLELISM_ENV: &str = "BANDIT_LAB_PARALLELISM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: Instance,
    #[serde(default = "default_population")]
    pub population: PopulationSpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_population() -> PopulationSpec {
    PopulationSpec::single(BehaviorSpec::Unbiased)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Failure threshold: at most `n` good-arm pulls beyond the initial samples.
    pub n: u64,
    pub trials: u64,
    pub ci_level: f64,
    pub master_seed: u64,
    /// Worker threads; the results do not depend on it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    /// Estimate the failure probability alone, stopping each trial once its
    /// outcome is known. Off: full trials that also yield regret.
    pub early_exit: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n: 0,
            trials: 10_000,
            ci_level: 0.99,
            master_seed: 1,
            parallelism: None,
            early_exit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<AxisSpec>,
    /// Append theorem-shape columns to each row.
    #[serde(default)]
    pub shapes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// `[mu1, mu2, weight]` triples.
    pub support: Vec<[f64; 3]>,
    /// Rounds at which the mean of `Z_t` is reported.
    #[serde(default = "default_rounds")]
    pub record_rounds: Vec<u64>,
}

fn default_rounds() -> Vec<u64> {
    vec![1, 10, 100]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub format: Format,
    /// Stem of the result file.
    pub name: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            format: Format::Csv,
            name: "results".into(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instance: Instance::new(0.6, 0.4, 1, 6).expect("valid default"),
            population: default_population(),
            estimator: EstimatorConfig::default(),
            sweep: None,
            prior: None,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; errors carry the line and column.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` (or the defaults when `None`) and applies `key=value`
    /// overrides in order.
    pub fn load(text: Option<&str>, overrides: &[String]) -> CliResult<Self> {
        if overrides.is_empty() {
            return match text {
                Some(t) => Self::from_toml(t),
                None => {
                    let cfg = Self::default();
                    cfg.validate()?;
                    Ok(cfg)
                }
            };
        }
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| CliError::Config(e.to_string()))?,
            None => toml::Table::try_from(Self::default()).map_err(|e| CliError::Config(e.to_string()))?,
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{o}`")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: social_bandits::Error| CliError::Config(format!("{name}: {e}"));
        self.instance.validate().map_err(|e| field("instance", e))?;
        self.population.validate().map_err(|e| field("population", e))?;
        let est = &self.estimator;
        if est.trials == 0 {
            return Err(CliError::Config("estimator.trials: must be at least 1".into()));
        }
        if !(est.ci_level > 0.0 && est.ci_level < 1.0) {
            return Err(CliError::Config(format!("estimator.ci_level: {} is not in (0, 1)", est.ci_level)));
        }
        if est.parallelism == Some(0) {
            return Err(CliError::Config("estimator.parallelism: must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            SweepGrid::new(s.axes.clone()).map_err(|e| field("sweep.axes", e))?;
        }
        if let Some(p) = &self.prior {
            self.finite_prior(p)?;
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(CliError::Config("output.name: must be a plain file stem".into()));
        }
        Ok(())
    }

    pub fn finite_prior(&self, p: &PriorConfig) -> CliResult<FiniteSupportPrior> {
        let triples: Vec<(f64, f64, f64)> = p.support.iter().map(|t| (t[0], t[1], t[2])).collect();
        FiniteSupportPrior::from_triples(&triples).map_err(|e| CliError::Config(format!("prior.support: {e}")))
    }

    pub fn grid(&self) -> Option<SweepGrid> {
        self.sweep.as_ref().map(|s| SweepGrid::new(s.axes.clone()).expect("validated"))
    }

    /// Failure alone with early exit, both from full trials, or regret alone
    /// when the first arm is not strictly better.
    pub fn estimator_for(&self, instance: &Instance) -> Estimator {
        if instance.mu1 <= instance.mu2 {
            Estimator::Regret
        } else if self.estimator.early_exit {
            Estimator::Failure { n: self.estimator.n }
        } else {
            Estimator::Both { n: self.estimator.n }
        }
    }

    pub fn settings(&self, parallelism: usize) -> McSettings {
        McSettings {
            trials: self.estimator.trials,
            master_seed: self.estimator.master_seed,
            parallelism,
            level: self.estimator.ci_level,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output block and the
    /// worker count, neither of which changes results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.estimator.parallelism = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Worker count: explicit flag, then the environment, then the config, then 1.
pub fn resolve_parallelism(flag: Option<usize>, env: Option<&str>, config: Option<usize>) -> CliResult<usize> {
    let from_env = match env {
        Some(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{PARALLELISM_ENV}={v} is not a positive integer")))?,
        ),
        _ => None,
    };
    let p = flag.or(from_env).or(config).unwrap_or(1);
    if p == 0 {
        return Err(CliError::Usage("parallelism must be at least 1".into()));
    }
    Ok(p)
}

/// TOML literal if it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key `{key}`")));
    }
    let mut slot = table
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    for (depth, part) in parts.iter().enumerate().skip(1) {
        let here = parts[..depth].join(".");
        slot = match slot {
            toml::Value::Table(t) => t
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| CliError::Usage(format!("`{here}` is a list; `{part}` is not an index")))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| CliError::Usage(format!("`{here}` has {len} entries; index {i} is out of range")))?
            }
            _ => return Err(CliError::Usage(format!("`{here}` is a value, not a block"))),
        };
    }
    *slot = value;
    Ok(())
}
