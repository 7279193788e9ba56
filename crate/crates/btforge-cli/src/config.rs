//! Optional JSON config file. Precedence is flags over config file over
//! built-in defaults.

use std::path::Path;

use serde::Deserialize;

use btforge::oracle::OracleConfig;
use btforge::scene::SceneConfig;
use btforge::sim::SimParams;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub sim: Option<SimParams>,
    pub scene: Option<SceneConfig>,
    pub oracle: Option<OracleConfig>,
    pub strict_offsets: Option<bool>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}
