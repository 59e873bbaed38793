//! Run configuration file.
//!
//! ```toml
//! [deployment]
//! sinks = 1
//! aggregators = 2
//! block_interval = 15000       # ms
//! archival_interval = 3600000  # ms
//! compression = 3600.0         # simulated ms per wall ms; omit to run unpaced
//!
//! [deployment.ledger]
//! archive_mode = "combined"
//!
//! [bench]
//! benchmark = "B2"
//! seed = 42
//! duration = 10800000          # ms
//! polling_interval = 60        # s
//! gas_price_gwei = 100.0
//! eth_usd = 131.0
//! ```
//!
//! Every key is optional. Command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fogchain_core::ids::HOUR;
use fogchain_core::{Benchmark, DeploymentConfig, Millis};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub duration: Millis,
    /// Seconds between polls of each registered device.
    pub polling_interval: u64,
    pub gas_price_gwei: f64,
    pub eth_usd: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            benchmark: Benchmark::B1,
            seed: 42,
            duration: 3 * HOUR,
            polling_interval: 60,
            gas_price_gwei: 100.0,
            eth_usd: 131.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub deployment: DeploymentConfig,
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: display.clone(), source })?;
        let config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: display, source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.deployment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let b = &self.bench;
        if b.duration == 0 {
            return Err(ConfigError::Invalid("bench.duration must be positive".into()));
        }
        if b.polling_interval == 0 {
            return Err(ConfigError::Invalid("bench.polling_interval must be positive".into()));
        }
        for (name, v) in [("gas_price_gwei", b.gas_price_gwei), ("eth_usd", b.eth_usd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("bench.{name} must be a non-negative number")));
            }
        }
        Ok(())
    }
}
