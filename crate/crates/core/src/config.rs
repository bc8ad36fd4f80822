//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; keys are case-sensitive and
//! use underscores. Command-line flags are applied on top of the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use crate::model::Activation;
use crate::privacy::NoiseMechanism;
use crate::train::{Carrier, ModelFamily, TrainingConfig};
use crate::worker::BatchReduction;
use crate::{Error, Result};

/// Every key the run configuration understands.
pub const KEYS: &[&str] = &[
    "mode",
    "data",
    "data_dir",
    "train",
    "test",
    "partition",
    "model",
    "hidden",
    "activation",
    "bias",
    "parties",
    "tau",
    "eta",
    "lambda",
    "batch",
    "epochs",
    "seed",
    "noise_mechanism",
    "noise_level",
    "noise_seed",
    "reduction",
    "deterministic",
    "carrier",
    "jitter_ms",
    "out",
    "listen",
    "status",
    "coordinator",
    "party_id",
    "samples",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("unknown key `{key}`"),
                });
            }
            map.entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                other => Err(Error::config(format!("invalid boolean `{other}` for `{key}`"))),
            })
            .transpose()
    }

    /// Training hyperparameters, with defaults for absent keys.
    pub fn training(&self) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig::default();
        if let Some(v) = self.typed("parties")? {
            cfg.parties = v;
        }
        if let Some(v) = self.typed("tau")? {
            cfg.staleness = v;
        }
        cfg.eta = self.typed("eta")?;
        if let Some(v) = self.typed("lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = self.typed("batch")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.typed("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.typed("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.typed::<ModelFamily>("model")? {
            cfg.model = v;
        }
        if let Some(v) = self.typed("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.typed::<Activation>("activation")? {
            cfg.activation = v;
        }
        if let Some(v) = self.flag("bias")? {
            cfg.bias = v;
        }
        if let Some(v) = self.typed::<BatchReduction>("reduction")? {
            cfg.reduction = v;
        }
        if let Some(v) = self.typed::<NoiseMechanism>("noise_mechanism")? {
            cfg.noise_mechanism = v;
        }
        if let Some(v) = self.typed("noise_level")? {
            cfg.noise_level = v;
        }
        if let Some(v) = self.typed("noise_seed")? {
            cfg.noise_seed = v;
        }
        if let Some(v) = self.flag("deterministic")? {
            cfg.deterministic = v;
        }
        if let Some(v) = self.get("carrier") {
            cfg.carrier = match v {
                "inproc" | "in-process" => Carrier::InProcess,
                "tcp" => Carrier::Tcp,
                other => return Err(Error::config(format!("unknown carrier `{other}`"))),
            };
        }
        if let Some(ms) = self.typed::<u64>("jitter_ms")? {
            cfg.jitter = Duration::from_millis(ms);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
