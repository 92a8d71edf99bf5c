//! TOML run configuration. Every key is optional; missing keys take the
//! defaults below.
//!
//! ```toml
//! [cloud]
//! tier_mix = "alternating"
//! host_types = ["type1", "type2"]
//! cost_rates = { cpu_per_sec = 3.0, ram_per_mb = 0.004, bw_per_mbps = 0.01, storage_per_mb = 0.0001 }
//!
//! [balancer]
//! task_threshold = 3
//! floor_fraction = 0.2
//! queue_mode = "scan"
//! execution = "proportional"
//!
//! [workload]
//! seed = 42
//! scale = 0.02
//! batch_count = 250
//! batch_size = 2000
//! inter_batch_interval_sec = 1.0
//! diurnal = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::balancer::{NormalizationBounds, Policy, QueueMode, TaskThreshold};
use crate::cloud::{CostRates, HostType, TierMix};
use crate::execution::ExecutionModel;
use crate::workload::{CategoryTable, SizeSampling, TaskCategory};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    /// Overrides the scenario's DC count when set.
    pub dcs: Option<usize>,
    /// Overrides the scenario's VMs per DC when set.
    pub vms_per_dc: Option<usize>,
    pub tier_mix: TierMix,
    pub host_types: Vec<HostType>,
    pub cost_rates: CostRates,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            dcs: None,
            vms_per_dc: None,
            tier_mix: TierMix::Alternating,
            host_types: vec![HostType::Type1, HostType::Type2],
            cost_rates: CostRates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalancerConfig {
    pub task_threshold: usize,
    pub floor_fraction: f64,
    /// Normalization range in MI. Defaults to the category table's range.
    pub mi_min: Option<f64>,
    pub mi_max: Option<f64>,
    pub queue_mode: QueueMode,
    pub execution: ExecutionModel,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self {
            task_threshold: 3,
            floor_fraction: 0.2,
            mi_min: None,
            mi_max: None,
            queue_mode: QueueMode::Scan,
            execution: ExecutionModel::Proportional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub seed: u64,
    /// Multiplies every batch size (rounded, at least one task per batch).
    pub scale: f64,
    pub batch_count: usize,
    /// Full-scale batch size, before `scale`.
    pub batch_size: usize,
    pub inter_batch_interval_sec: f64,
    /// Use the 24-hour peak/off-peak plan instead of the flat batch plan.
    pub diurnal: bool,
    pub size_sampling: SizeSampling,
    pub categories: Vec<TaskCategory>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let table = CategoryTable::default();
        Self {
            seed: 42,
            scale: 0.02,
            batch_count: 250,
            batch_size: 2000,
            inter_batch_interval_sec: 1.0,
            diurnal: false,
            size_sampling: table.size_sampling,
            categories: table.categories,
        }
    }
}

impl WorkloadConfig {
    pub fn table(&self) -> CategoryTable {
        CategoryTable { categories: self.categories.clone(), size_sampling: self.size_sampling }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cloud: CloudConfig,
    pub balancer: BalancerConfig,
    pub workload: WorkloadConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.cloud.dcs == Some(0) || self.cloud.vms_per_dc == Some(0) {
            return bad("dcs and vms_per_dc must be positive".into());
        }
        if self.cloud.host_types.is_empty() {
            return bad("host_types is empty".into());
        }
        self.cloud.cost_rates.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.workload.table().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.bounds()?;
        TaskThreshold::new(self.balancer.task_threshold).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let w = &self.workload;
        if !(w.scale > 0.0 && w.scale <= 1.0) {
            return bad(format!("scale {} not in (0, 1]", w.scale));
        }
        if w.batch_count == 0 || w.batch_size == 0 {
            return bad("batch_count and batch_size must be positive".into());
        }
        if !(w.inter_batch_interval_sec.is_finite() && w.inter_batch_interval_sec > 0.0) {
            return bad(format!("inter_batch_interval_sec {} must be finite and positive", w.inter_batch_interval_sec));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<NormalizationBounds, ConfigError> {
        let (lo, hi) = self.workload.table().mi_bounds();
        let b = &self.balancer;
        NormalizationBounds::new(b.mi_min.unwrap_or(lo), b.mi_max.unwrap_or(hi), b.floor_fraction)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sbdlb_policy(&self, threshold: usize) -> Result<Policy, ConfigError> {
        Ok(Policy::Sbdlb {
            bounds: self.bounds()?,
            threshold: TaskThreshold::new(threshold).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        let b = c.bounds().unwrap();
        assert!((b.mi_min - 0.1).abs() < 1e-12 && b.mi_max == 1e7);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.balancer.queue_mode = QueueMode::HeadOnly;
        c.cloud.dcs = Some(3);
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert_ne!(c.content_hash(), Config::default().content_hash());
    }

    #[test]
    fn partial_sections_override() {
        let c = Config::from_toml("[balancer]\ntask_threshold = 4\nqueue_mode = \"head-only\"\n[cloud]\nhost_types = [\"type2\"]\n").unwrap();
        assert_eq!(c.balancer.task_threshold, 4);
        assert_eq!(c.balancer.queue_mode, QueueMode::HeadOnly);
        assert_eq!(c.cloud.host_types, vec![HostType::Type2]);
        assert_eq!(c.workload, WorkloadConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(Config::from_toml("[balancer]\ntask_threshold = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::from_toml("[balancer]\nfloor_fraction = 1.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::from_toml("[workload]\nscale = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::from_toml("[workload]\nbogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(Config::from_toml("[cloud]\nvms_per_dc = 0"), Err(ConfigError::Invalid(_))));
    }
}
