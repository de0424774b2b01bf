//! Application configuration: named presets overlaid by an optional TOML file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::{ClusterParams, DetectorConfig};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_MATCH_THRESHOLD;
use crate::pipeline::PipelineConfig;
use crate::tracking::TrackerConfig;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "LIDARTRACK_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "config-1")]
    Config1,
    #[serde(rename = "config-2")]
    Config2,
    #[serde(rename = "config-3")]
    Config3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Config1, Preset::Config2, Preset::Config3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Config1 => "config-1",
            Self::Config2 => "config-2",
            Self::Config3 => "config-3",
        }
    }

    /// `(window_stride, confidence_threshold, c_init, c_del)`.
    pub fn parameters(&self) -> (usize, f64, u32, u32) {
        match self {
            Self::Config1 => (1, 0.85, 10, 15),
            Self::Config2 => (10, 0.85, 10, 15),
            Self::Config3 => (10, 0.8, 5, 15),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "config-1" | "1" => Ok(Self::Config1),
            "config-2" | "2" => Ok(Self::Config2),
            "config-3" | "3" => Ok(Self::Config3),
            other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub threshold: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub preset: Preset,
    pub detector: DetectorConfig,
    pub cluster: ClusterParams,
    pub tracker: TrackerConfig,
    pub evaluation: EvaluationSettings,
    pub pipeline: PipelineConfig,
}

impl AppConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let (stride, threshold, c_init, c_del) = preset.parameters();
        Self {
            preset,
            detector: DetectorConfig {
                window_stride: stride,
                confidence_threshold: threshold,
                ..DetectorConfig::default()
            },
            cluster: ClusterParams::default(),
            tracker: TrackerConfig {
                c_init,
                c_del,
                ..TrackerConfig::default()
            },
            evaluation: EvaluationSettings::default(),
            pipeline: PipelineConfig::default(),
        }
    }

    /// Parses a TOML overlay. A top-level `preset` key picks the base,
    /// otherwise `default_preset` is used; every other key overrides it.
    pub fn from_toml_str(text: &str, default_preset: Preset) -> Result<Self> {
        let overlay = parse_table(text)?;
        let preset = match overlay.get("preset") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::config("preset", "must be a string")),
            None => default_preset,
        };
        let cfg = apply_overlay(&Self::from_preset(preset), overlay)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, default_preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.cluster.validate()?;
        self.tracker.validate()?;
        if !(self.evaluation.threshold > 0.0) {
            return Err(Error::config("evaluation.threshold", "must be positive"));
        }
        self.pipeline.validate()?;
        Ok(())
    }
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Config1)
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
}

/// Overrides fields of `base` with the keys present in `text`. Unknown keys
/// are errors naming their dotted path.
pub fn overlay_toml<T: Serialize + DeserializeOwned>(base: &T, text: &str) -> Result<T> {
    apply_overlay(base, parse_table(text)?)
}

fn apply_overlay<T: Serialize + DeserializeOwned>(base: &T, overlay: toml::Table) -> Result<T> {
    let mut merged =
        toml::Table::try_from(base).map_err(|e| Error::config("config", e.to_string()))?;
    let mut added = Vec::new();
    merge_tables(&mut merged, overlay, "", &mut added)?;
    merged.try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        // Keys absent from the base are either unset optional fields or typos.
        let unknown = added.iter().find(|path| {
            let key = path.rsplit('.').next().unwrap_or(path);
            msg.contains(&format!("unknown field `{key}`"))
        });
        match unknown {
            Some(path) => Error::config(path.clone(), "unknown key"),
            None => Error::config("config", msg),
        }
    })
}

fn merge_tables(
    base: &mut toml::Table,
    overlay: toml::Table,
    prefix: &str,
    added: &mut Vec<String>,
) -> Result<()> {
    for (key, value) in overlay {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                merge_tables(b, o, &path, added)?
            }
            (Some(toml::Value::Table(_)), _) => {
                return Err(Error::config(path, "expected a table"));
            }
            (Some(slot), v) => *slot = v,
            (None, v) => {
                added.push(path);
                base.insert(key, v);
            }
        }
    }
    Ok(())
}
