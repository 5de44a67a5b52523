//! Experiment configuration: a TOML document with defaults for everything
//! except the vocabulary size, sequence length and rate kind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::bounds::StartKind;
use crate::error::{Error, Result};
use crate::evolve::{Distribution, IntegratorConfig};
use crate::metrics::IpmSpec;
use crate::rates::{RateKind, RateSpec, Schedule};
use crate::score::Perturbation;
use crate::space::SequenceSpace;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DIFFLAB_OUT_DIR";
/// Output directory used when neither the config nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "difflab-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Point mass at one sequence.
    Dirac { tokens: Vec<usize> },
    /// Flat-Dirichlet draw; under masked rates, sequences containing the
    /// mask get no mass.
    RandomSimplex {
        #[serde(default)]
        seed: u64,
    },
    /// Weights in state-index order.
    Explicit { weights: Vec<f64> },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::RandomSimplex { seed: 0 }
    }
}

fn default_schedule() -> Schedule {
    Schedule::constant(1.0, 2.0).expect("valid default schedule")
}

fn default_trials() -> usize {
    100_000
}

fn default_samples() -> usize {
    20
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub rate_kind: RateKind,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub data: DataSpec,
    /// Where generation starts.
    #[serde(default)]
    pub start: StartKind,
    /// Metrics for the specialized bounds; empty means the standard set.
    #[serde(default)]
    pub metrics: Vec<IpmSpec>,
    /// Suites run by `verify` when none is named.
    #[serde(default)]
    pub suites: Vec<String>,
    /// Monte Carlo paths for the coupling and sampler suites.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Random observables or perturbation seeds drawn by the lemma suites.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Seed for the observables and Monte Carlo streams.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Record wall-clock timings; off by default so reports are reproducible.
    #[serde(default)]
    pub record_timings: bool,
    /// CSV report path; defaults to a file in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(vocab_size: usize, seq_len: usize, rate_kind: RateKind) -> Self {
        Self {
            vocab_size,
            seq_len,
            rate_kind,
            schedule: default_schedule(),
            integrator: IntegratorConfig::default(),
            perturbation: Perturbation::default(),
            data: DataSpec::default(),
            start: StartKind::default(),
            metrics: Vec::new(),
            suites: Vec::new(),
            trials: default_trials(),
            samples: default_samples(),
            seed: default_seed(),
            record_timings: false,
            output_path: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> Table {
        match Value::try_from(self).expect("config serializes") {
            Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides with dotted keys, then revalidates.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = self.to_table();
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override `{item}` is not of the form key=value")))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.space().map_err(|e| Error::Config(e.to_string()))?;
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.integrator.validate()?;
        self.perturbation.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        self.data(&space)?;
        Ok(())
    }

    pub fn space(&self) -> Result<SequenceSpace> {
        match self.rate_kind {
            RateKind::Masked => SequenceSpace::masked(self.vocab_size, self.seq_len),
            RateKind::Uniform => SequenceSpace::new(self.vocab_size, self.seq_len),
        }
    }

    pub fn rate_spec(&self) -> Result<RateSpec> {
        RateSpec::new(self.rate_kind, self.schedule, self.space()?)
    }

    /// The data law, checked against the space and, under masked rates,
    /// required to avoid every sequence containing the mask.
    pub fn data(&self, space: &SequenceSpace) -> Result<Distribution> {
        let masked = self.rate_kind == RateKind::Masked;
        let dist = match &self.data {
            DataSpec::Dirac { tokens } => {
                let x = space.encode(tokens).map_err(|e| Error::Config(e.to_string()))?;
                Distribution::point_mass(space, x)
            }
            DataSpec::RandomSimplex { seed } => Distribution::random_simplex(space, *seed, masked),
            DataSpec::Explicit { weights } => {
                if weights.len() != space.state_count() {
                    return Err(Error::Config(format!(
                        "data.weights has {} entries, the space has {} states",
                        weights.len(),
                        space.state_count()
                    )));
                }
                Distribution::new(weights.clone(), 0.0).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        if masked {
            if let Some(x) = space.states().find(|&x| space.contains_mask(x) && dist.weights()[x.get()] > 0.0) {
                return Err(Error::Config(format!(
                    "masked data must avoid sequences containing the mask token, but state {} has mass",
                    x.get()
                )));
            }
        }
        Ok(dist)
    }

    /// Configured metrics, or the standard set when none are listed.
    pub fn metric_list(&self) -> Vec<IpmSpec> {
        if self.metrics.is_empty() {
            IpmSpec::standard_set(self.seq_len)
        } else {
            self.metrics.clone()
        }
    }

    /// Directory for reports: the environment override, else the default.
    pub fn output_dir() -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// CSV path for a report named `stem`.
    pub fn report_path(&self, stem: &str) -> PathBuf {
        self.output_path
            .clone()
            .unwrap_or_else(|| Self::output_dir().join(format!("{stem}.csv")))
    }

    /// Scalar settings as dotted keys in document order; arrays are skipped.
    pub fn axes(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        flatten("", &Value::Table(self.to_table()), &mut out);
        out.retain(|(k, _)| !matches!(k.as_str(), "output_path" | "record_timings" | "trials" | "samples"));
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(_) => {}
        other => out.push((prefix.to_string(), other.clone())),
    }
}

/// A TOML literal, falling back to a bare string.
pub fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

/// Sets `key` (dotted) in `table`, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Renders a scalar for a report cell; floats keep 17 significant digits.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => format_float(*f),
        other => other.to_string(),
    }
}

pub fn format_float(f: f64) -> String {
    format!("{f:.16e}")
}
