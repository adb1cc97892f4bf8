//! TOML configuration files. Errors name the offending field by its dotted
//! path, e.g. `pipeline.em.iterations`.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, SimulateConfig};
use crate::pipeline::PipelineConfig;

/// Deserialises `text` without further validation.
pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<document>".to_string() } else { path };
        Error::config(path, e.into_inner().message())
    })
}

pub fn parse_pipeline_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_simulate_config(text: &str) -> Result<SimulateConfig> {
    let cfg: SimulateConfig = from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn to_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Precondition(e.to_string()))
}
