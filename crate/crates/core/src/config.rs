//! Run configuration: a flat `section.key = value` file (TOML dotted keys)
//! resolved against defaults, checked for unknown keys and types, and
//! validated per section.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::calib::{CalibConfig, Testbench, TrainSpec};
use crate::chip::{ChipConfig, ChipError};
use crate::executor::ExecutorConfig;
use crate::experiment::ExperimentConfig;
use crate::neuron::{NeuronError, NeuronParams};
use crate::stpdriver::StpParams;
use crate::synarray::SynapseParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("type mismatch for `{key}`: expected {expected}, found {found}")]
    Type {
        key: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipSection {
    pub rows: usize,
    pub neurons: usize,
    pub dt: f64,
    pub tau_syn: f64,
    pub arbitration_group: usize,
    pub arbitration_depth: usize,
    pub reset_trace_on_read: bool,
    /// Optional weight matrix CSV loaded before a program run; empty for none.
    pub weights_csv: String,
    /// Optional per-driver calibration code CSV; empty for none.
    pub calib_codes_csv: String,
    /// Dump `(V, w)` of every neuron per step during program runs.
    pub record_membranes: bool,
}

impl Default for ChipSection {
    fn default() -> Self {
        let c = ChipConfig::default();
        Self {
            rows: c.rows,
            neurons: c.neurons,
            dt: c.dt,
            tau_syn: c.tau_syn,
            arbitration_group: c.arbitration_group,
            arbitration_depth: c.arbitration_depth,
            reset_trace_on_read: c.reset_trace_on_read,
            weights_csv: String::new(),
            calib_codes_csv: String::new(),
            record_membranes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibSection {
    pub n_instances: u32,
    pub mismatch_sigma: f64,
    pub target: f64,
    pub hist_bins: usize,
    pub train: TrainSpec,
    pub testbench: Testbench,
}

impl Default for CalibSection {
    fn default() -> Self {
        let c = CalibConfig::default();
        Self {
            n_instances: 128,
            mismatch_sigma: c.mismatch_sigma,
            target: c.target,
            hist_bins: c.hist_bins,
            train: c.train,
            testbench: c.testbench,
        }
    }
}

/// Fully resolved configuration tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub chip: ChipSection,
    pub neuron: NeuronParams,
    pub synapse: SynapseParams,
    pub stp: StpParams,
    pub executor: ExecutorConfig,
    pub experiment: ExperimentConfig,
    pub calib: CalibSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            chip: ChipSection::default(),
            neuron: NeuronParams::default(),
            synapse: SynapseParams::default(),
            stp: StpParams::default(),
            executor: ExecutorConfig::default(),
            experiment: ExperimentConfig::default(),
            calib: CalibSection::default(),
        }
    }
}

impl Config {
    pub fn chip_config(&self) -> ChipConfig {
        let c = &self.chip;
        ChipConfig {
            rows: c.rows,
            neurons: c.neurons,
            dt: c.dt,
            tau_syn: c.tau_syn,
            arbitration_group: c.arbitration_group,
            arbitration_depth: c.arbitration_depth,
            reset_trace_on_read: c.reset_trace_on_read,
            neuron: self.neuron,
            synapse: self.synapse,
            stp: self.stp,
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            ..self.experiment
        }
    }

    pub fn calib_config(&self) -> CalibConfig {
        let c = &self.calib;
        CalibConfig {
            stp: self.stp,
            mismatch_sigma: c.mismatch_sigma,
            train: c.train,
            testbench: c.testbench,
            target: c.target,
            hist_bins: c.hist_bins,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, msg: String| ConfigError::Invalid {
            key: key.to_string(),
            msg,
        };
        self.neuron.validate().map_err(|e| match e {
            NeuronError::InvalidParam { field, reason } => {
                invalid(&format!("neuron.{field}"), reason)
            }
            other => invalid("neuron", other.to_string()),
        })?;
        self.stp
            .validate()
            .map_err(|e| invalid("stp", e.to_string()))?;
        self.chip_config().validate().map_err(|e| match e {
            ChipError::Neuron(NeuronError::InvalidParam { field, reason }) => {
                invalid(&format!("neuron.{field}"), reason)
            }
            other => invalid("chip", other.to_string()),
        })?;
        self.experiment_config()
            .validate()
            .map_err(|e| invalid("experiment", e.to_string()))?;
        self.calib_config()
            .validate()
            .map_err(|e| invalid("calib", e.to_string()))?;
        if self.calib.n_instances == 0 {
            return Err(invalid("calib.n_instances", "must be >= 1".into()));
        }
        Ok(())
    }

    /// Flat `section.key = value` rendering that [`parse_config`] reads back
    /// to an identical tree.
    pub fn to_flat(&self) -> String {
        let value = Value::try_from(self.clone()).expect("config serializes");
        let mut out = String::new();
        if let Value::Table(t) = value {
            flatten("", &t, &mut out);
        }
        out
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut String) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            Value::Float(x) => {
                let _ = writeln!(out, "{key} = {x:?}");
            }
            other => {
                let _ = writeln!(out, "{key} = {other}");
            }
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "section",
    }
}

/// Overwrites entries of `base` with `user`, rejecting keys absent from
/// `base` and values of the wrong type. Integers widen to floats.
fn overlay(prefix: &str, base: &mut Table, user: Table) -> Result<(), ConfigError> {
    for (k, v) in user {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let Some(slot) = base.get_mut(&k) else {
            return Err(ConfigError::UnknownKey(key));
        };
        match (&mut *slot, v) {
            (Value::Table(s), Value::Table(t)) => overlay(&key, s, t)?,
            (Value::Float(_), Value::Integer(i)) => *slot = Value::Float(i as f64),
            (e, got) if std::mem::discriminant(&*e) == std::mem::discriminant(&got) => *slot = got,
            (e, got) => {
                return Err(ConfigError::Type {
                    key,
                    expected: type_name(e),
                    found: type_name(&got),
                })
            }
        }
    }
    Ok(())
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let Value::Table(mut table) = Value::try_from(Config::default()).expect("config serializes")
    else {
        unreachable!("config is a table");
    };
    overlay("", &mut table, user)?;
    let config: Config = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(parse_config("").unwrap(), Config::default());
        assert_eq!(parse_config("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn dotted_keys() {
        let c = parse_config(
            "experiment.overlap_fraction = 0.4\nneuron.tau_ref = 1e-3\nseed = 9\nchip.dt = 2e-6\n",
        )
        .unwrap();
        assert_eq!(c.experiment.overlap_channels(), 2);
        assert_eq!(c.neuron.tau_ref, 1e-3);
        assert_eq!(c.experiment_config().seed, 9);
        assert_eq!(c.chip_config().dt, 2e-6);
    }

    #[test]
    fn integer_widens_to_float() {
        let c = parse_config("experiment.nu = 10\n").unwrap();
        assert_eq!(c.experiment.nu, 10.0);
    }

    #[test]
    fn errors_name_key() {
        let e = parse_config("neuron.tau_ref = -1").unwrap_err();
        assert!(e.to_string().contains("neuron.tau_ref"), "{e}");
        let e = parse_config("experiment.bogus = 1").unwrap_err();
        assert!(
            matches!(&e, ConfigError::UnknownKey(k) if k == "experiment.bogus"),
            "{e}"
        );
        let e = parse_config("chip.rows = \"many\"").unwrap_err();
        assert!(
            matches!(&e, ConfigError::Type { key, .. } if key == "chip.rows"),
            "{e}"
        );
        let e = parse_config("experiment.seed = 3").unwrap_err();
        assert!(
            matches!(&e, ConfigError::UnknownKey(k) if k == "experiment.seed"),
            "{e}"
        );
        assert!(matches!(parse_config("a = ="), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut c = Config {
            seed: 77,
            ..Config::default()
        };
        c.experiment.eta = 0.1 + 0.2;
        c.chip.weights_csv = "w \"x\".csv".into();
        let text = c.to_flat();
        assert!(text.lines().all(|l| !l.starts_with('[')));
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
