//! Flat key-value config files.
//!
//! Keys mirror the command-line flags with `-` replaced by `_`:
//!
//! ```toml
//! nodes = 1000
//! colors = 2
//! need = 2
//! profile = "loose"      # tight | loose | server_client | polarized
//! alpha = 0.1
//! r = 2
//! horizon = 100.0
//! record_interval = 1.0
//! seed = 7
//! depth_mode = "distributed"
//! clock_rate = 1.0
//! scenario = "tight"     # batch only
//! repeats = 500
//! percentiles = [0.2, 1, 5, 50, 100]
//! metrics = ["coverage", "max_depth"]
//! jobs = 8
//! nodes_list = [64, 256, 1024]   # bound only
//! trials = 200
//! epsilons = [1, 2, 3]
//! ```
//!
//! Every key is optional. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::protocol::DepthMode;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub nodes: Option<u32>,
    pub colors: Option<u32>,
    pub need: Option<u32>,
    pub profile: Option<String>,
    pub alpha: Option<f64>,
    pub r: Option<u32>,
    pub horizon: Option<f64>,
    pub record_interval: Option<f64>,
    pub seed: Option<u64>,
    pub depth_mode: Option<DepthMode>,
    pub clock_rate: Option<f64>,
    pub scenario: Option<String>,
    pub repeats: Option<u32>,
    pub percentiles: Option<Vec<f64>>,
    pub metrics: Option<Vec<String>>,
    pub jobs: Option<usize>,
    pub check_convergence: Option<bool>,
    pub nodes_list: Option<Vec<u32>>,
    pub trials: Option<u32>,
    pub epsilons: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigFileError> {
        toml::from_str(text).map_err(|source| ConfigFileError::Toml { path: origin.to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: origin.clone(), source })?;
        Self::parse(&text, &origin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let cfg = FileConfig::parse(
            "nodes = 50\nprofile = \"loose\"\nalpha = 0.1\ndepth_mode = \"instantaneous\"\npercentiles = [1, 50]\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.nodes, Some(50));
        assert_eq!(cfg.profile.as_deref(), Some("loose"));
        assert_eq!(cfg.depth_mode, Some(DepthMode::Instantaneous));
        assert_eq!(cfg.percentiles, Some(vec![1.0, 50.0]));
        assert_eq!(cfg.seed, None);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = FileConfig::parse("nodez = 3\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("nodez"), "{err}");
    }
}
