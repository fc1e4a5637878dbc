//! Run configuration: TOML files, shipped presets and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envs::{EnvKind, CROP};
use crate::error::{Error, Result};
use crate::models::ModelConfig;

/// Shipped presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("catch-dcqn-desk", include_str!("../presets/catch-dcqn-desk.toml")),
    ("catch-dtqn-proj-desk", include_str!("../presets/catch-dtqn-proj-desk.toml")),
    ("catch-dtqn-vit-desk", include_str!("../presets/catch-dtqn-vit-desk.toml")),
    ("catch-conv-transformer-desk", include_str!("../presets/catch-conv-transformer-desk.toml")),
    ("gauntlet-dcqn-desk", include_str!("../presets/gauntlet-dcqn-desk.toml")),
    ("centipede-dcqn", include_str!("../presets/centipede-dcqn.toml")),
    ("centipede-dtqn", include_str!("../presets/centipede-dtqn.toml")),
    ("asteroids-dcqn", include_str!("../presets/asteroids-dcqn.toml")),
    ("asteroids-dtqn", include_str!("../presets/asteroids-dtqn.toml")),
    ("space-invaders-dcqn", include_str!("../presets/space-invaders-dcqn.toml")),
    ("space-invaders-dtqn", include_str!("../presets/space-invaders-dtqn.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
}

fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogConfig {
    /// Fill the wall-clock columns of the metrics log. Off by default so that
    /// identical seeds give byte-identical logs; timings always go to a
    /// separate file.
    #[serde(default)]
    pub wall_clock_in_metrics: bool,
    /// Write checkpoints after each evaluation and at the end.
    #[serde(default = "d_true")]
    pub checkpoints: bool,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { wall_clock_in_metrics: false, checkpoints: true }
    }
}

fn d_seed() -> u64 {
    42
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub log: LogConfig,
}

fn parse_err(e: toml::de::Error) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(parse_err)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let Some((_, text)) = PRESETS.iter().find(|(n, _)| *n == name) else {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                available: preset_names().into_iter().map(String::from).collect(),
            });
        };
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.field=value` overrides. Values are parsed as TOML
    /// (numbers, booleans, arrays, inline tables), falling back to a bare string.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let Some((key, raw)) = item.split_once('=') else {
                return Err(Error::Config(format!("override '{item}' is not of the form key=value")));
            };
            let key = key.trim();
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in '{item}'")))?;
            let mut node = &mut root;
            for part in parts {
                let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}' does not name a field")))?;
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}' does not name a field")))?;
            table.insert(leaf.to_string(), value);
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid override: {}", e.to_string().trim_end())))?;
        Ok(())
    }

    /// Fills the action count from the environment and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        let env_actions = self.env.kind.action_count();
        if self.model.actions == 0 {
            self.model.actions = env_actions;
        }
        if self.model.actions != env_actions {
            return Err(Error::Config(format!(
                "model.actions is {} but env {} has {env_actions} actions",
                self.model.actions,
                self.env.kind.name()
            )));
        }
        if self.model.frame_size != CROP {
            return Err(Error::Config(format!(
                "model.frame_size must be {CROP} for environment frames, got {}",
                self.model.frame_size
            )));
        }
        self.model.validate()?;
        self.model.fill_defaults();
        self.agent.validate()?;
        Ok(self)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn every_preset_resolves() {
        for name in preset_names() {
            RunConfig::preset(name).and_then(RunConfig::resolve).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn published_rows_load_verbatim() {
        let c = RunConfig::preset("centipede-dcqn").unwrap();
        assert_eq!(c.model.variant, Variant::Dcqn);
        let a = &c.agent;
        assert_eq!((a.learning_rate, a.gamma, a.batch_size, a.replay_capacity, a.target_sync), (1e-4, 0.99, 32, 1_000_000, 500));
        let rows = [
            ("centipede-dtqn", 2e-4, 500),
            ("asteroids-dcqn", 1e-4, 100),
            ("asteroids-dtqn", 3e-4, 100),
            ("space-invaders-dcqn", 2e-4, 500),
            ("space-invaders-dtqn", 1e-4, 500),
        ];
        for (name, lr, sync) in rows {
            let a = RunConfig::preset(name).unwrap().agent;
            assert_eq!((a.learning_rate, a.target_sync, a.batch_size, a.gamma), (lr, sync, 32, 0.99), "{name}");
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = RunConfig::preset("nope").unwrap_err().to_string();
        assert!(err.contains("catch-dcqn-desk"), "{err}");
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut c = RunConfig::preset("catch-dcqn-desk").unwrap();
        c.apply_overrides(&["agent.learning_rate=0.002", "agent.loss=mse", "seed=7", "model.fc=[16, 8]"]).unwrap();
        assert_eq!(c.agent.learning_rate, 0.002);
        assert_eq!(c.agent.loss, crate::agent::LossMode::Mse);
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.fc, vec![16, 8]);
        let err = c.clone().apply_overrides(&["agent.bogus=1"]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let mut bad = c.clone();
        bad.apply_overrides(&["agent.gamma=1.5"]).unwrap();
        assert!(bad.resolve().unwrap_err().to_string().contains("agent.gamma"));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::preset("catch-dtqn-proj-desk").unwrap().resolve().unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
