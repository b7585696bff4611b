//! Run configuration file (TOML). Every section is optional and falls back
//! to defaults; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::Task;
use crate::model::ModelConfig;
use crate::preprocess::{AugmentParams, PreprocessConfig};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing config {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// What `train` produces: one classifier or the full bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskSelection {
    #[default]
    Bank,
    Single(Task),
}

impl fmt::Display for TaskSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSelection::Bank => write!(f, "bank"),
            TaskSelection::Single(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for TaskSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "bank" {
            Ok(TaskSelection::Bank)
        } else {
            s.parse().map(TaskSelection::Single).map_err(|_| {
                format!("unknown task `{s}` (expected glaucoma, feature1..feature10 or bank)")
            })
        }
    }
}

impl Serialize for TaskSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Input and output locations. Relative paths in a config file are taken
/// relative to the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSelection,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub preprocess: PreprocessConfig,
    pub synth: SynthConfig,
    /// Set when the file had a `[model]` table.
    #[serde(skip)]
    pub model_given: bool,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let model_given = raw.contains_key("model");
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        cfg.model_given = model_given;
        cfg.model.validate().map_err(|e| parse_err(format!("model: {e}")))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.manifest, &mut cfg.paths.out, &mut cfg.paths.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.is_file() {
            return Err(ConfigError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("task = \"feature3\"\n[train]\nepochs = 2\n", Path::new("x/run.toml")).unwrap();
        assert_eq!(c.task, TaskSelection::Single(Task::Feature(3)));
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 8);
        assert!(!c.model_given);
        assert_eq!(RunConfig::parse("", Path::new("r.toml")).unwrap().task, TaskSelection::Bank);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1\n", "[train]\nlearning_rate = 1.0\n", "[model]\ndepth = 2\nwidth = 3\n"] {
            assert!(matches!(
                RunConfig::parse(text, Path::new("r.toml")),
                Err(ConfigError::Parse { .. })
            ));
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::parse("[model]\ndepth = 2\n[paths]\nmanifest = \"m.csv\"\n", Path::new("d/r.toml")).unwrap();
        assert!(c.model_given);
        assert_eq!(c.paths.manifest, Some(PathBuf::from("d/m.csv")));
        let back = RunConfig::parse(&c.to_toml(), Path::new("r.toml")).unwrap();
        c.model_given = true;
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_model_rejected() {
        assert!(RunConfig::parse("[model]\npatch_size = 7\n", Path::new("r.toml")).is_err());
    }
}
