use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::safety::{default_scenarios, triple_blackout, Scenario};
use crate::scene::DatasetConfig;
use crate::tasks::TrainConfig;

pub const CONFIG_TAG: &str = "FFUSION-CONFIG v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Test samples used for the functional independence check.
    pub independence_samples: usize,
    pub probes: bool,
    /// Noise levels for the fused versus camera-only comparison; empty skips it.
    pub snr_sigmas: Vec<f64>,
    /// Architecture file whose decomposition verdicts go into the report.
    pub arch: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            independence_samples: 8,
            probes: true,
            snr_sigmas: vec![0.0, 0.25, 0.5, 1.0],
            arch: None,
        }
    }
}

/// Everything a run depends on. Every output goes under `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format: String,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scenarios: Vec<Scenario>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut scenarios = default_scenarios();
        scenarios.push(triple_blackout());
        Self {
            format: CONFIG_TAG.into(),
            out_dir: "run".into(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scenarios,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_TAG {
            return Err(Error::Config(format!("unsupported config format `{}`", self.format)));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.dataset.splits.validate()?;
        if self.dataset.n == 0 {
            return Err(Error::Config("dataset.n must be at least 1".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("scenario `{}` listed twice", s.name)));
            }
            s.validate().map_err(|e| Error::Config(format!("scenario `{}`: {e}", s.name)))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Parses a config, rejecting keys the schema does not know, then
    /// applies `key.path=value` overrides. Values parse as JSON and fall
    /// back to plain strings.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        let cfg = Self::from_value(user.clone())?;
        let canonical = serde_json::to_value(&cfg).expect("config serializes");
        if let Some(key) = unknown_key(&user, &canonical, "") {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let mut full = canonical;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            let slot = key
                .split('.')
                .try_fold(&mut full, |v, k| match v {
                    Value::Object(map) => map.get_mut(k),
                    Value::Array(items) => k.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                })
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
            *slot = value;
        }
        let cfg = Self::from_value(full)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => RunConfig::default().to_json(),
        };
        Self::parse(&text, overrides)
    }

    fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }
}

fn unknown_key(user: &Value, canonical: &Value, prefix: &str) -> Option<String> {
    match (user, canonical) {
        (Value::Object(u), Value::Object(c)) => u.iter().find_map(|(k, v)| {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match c.get(k) {
                None if v.is_null() => None,
                None => Some(path),
                Some(cv) => unknown_key(v, cv, &path),
            }
        }),
        (Value::Array(u), Value::Array(c)) => u
            .iter()
            .zip(c)
            .enumerate()
            .find_map(|(i, (a, b))| unknown_key(a, b, &format!("{prefix}.{i}"))),
        _ => None,
    }
}
