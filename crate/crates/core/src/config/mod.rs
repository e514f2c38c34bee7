//! Experiment configuration types and the master seeding discipline.
//!
//! Everything here is immutable once constructed. The rest of the crate
//! consumes these types by reference, so a single configuration can be
//! shared across concurrent device workers.

mod file;
mod rng;

pub use file::{
    Algorithm, DataSection, DeviceCount, DownlinkSection, EvalSection, ExperimentConfig, HierarchySection, OutputSection,
    ModelSection, PartitionSection, ScheduleSection, SyntheticSection,
};
pub use rng::{fork_rng, Purpose, StreamLabel, StreamRng};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::compress::TiePolicy;

/// Tolerance used when checking that weight vectors are probability vectors.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("hierarchy has no edges")]
    NoEdges,
    #[error("edge {edge} has no devices")]
    EmptyEdge { edge: usize },
    #[error("device {device} of edge {edge} has an empty shard")]
    EmptyShard { edge: usize, device: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid downlink config: active_components = {n} with dimension {d}")]
    Downlink { n: usize, d: usize },
    #[error("invalid partition spec: {0}")]
    Partition(String),
    #[error("config file: {0}")]
    File(String),
}

/// Two-tier layout: `Q` edge servers, each with its own device shards.
///
/// Integer sample counts are kept next to the derived weights so that
/// conservation checks can be done exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    shard_sizes: Vec<Vec<usize>>,
    edge_sizes: Vec<usize>,
    total: usize,
    edge_weights: Vec<f64>,
    device_weights: Vec<Vec<f64>>,
}

impl Hierarchy {
    /// Builds a hierarchy from per-device sample counts grouped by edge.
    pub fn derive_weights(shard_sizes: Vec<Vec<usize>>) -> Result<Self, ConfigError> {
        if shard_sizes.is_empty() {
            return Err(ConfigError::NoEdges);
        }
        for (edge, devices) in shard_sizes.iter().enumerate() {
            if devices.is_empty() {
                return Err(ConfigError::EmptyEdge { edge });
            }
            if let Some(device) = devices.iter().position(|&n| n == 0) {
                return Err(ConfigError::EmptyShard { edge, device });
            }
        }
        let edge_sizes: Vec<usize> = shard_sizes.iter().map(|d| d.iter().sum()).collect();
        let total: usize = edge_sizes.iter().sum();
        let edge_weights = edge_sizes
            .iter()
            .map(|&dq| dq as f64 / total as f64)
            .collect();
        let device_weights = shard_sizes
            .iter()
            .zip(&edge_sizes)
            .map(|(devices, &dq)| devices.iter().map(|&n| n as f64 / dq as f64).collect())
            .collect();
        Ok(Self {
            shard_sizes,
            edge_sizes,
            total,
            edge_weights,
            device_weights,
        })
    }

    /// `Q` edges with `M` devices each, every shard holding `shard` samples.
    pub fn uniform(num_edges: usize, devices_per_edge: usize, shard: usize) -> Result<Self, ConfigError> {
        Self::derive_weights(vec![vec![shard; devices_per_edge]; num_edges])
    }

    pub fn num_edges(&self) -> usize {
        self.shard_sizes.len()
    }

    pub fn devices_per_edge(&self) -> Vec<usize> {
        self.shard_sizes.iter().map(Vec::len).collect()
    }

    pub fn num_devices(&self) -> usize {
        self.shard_sizes.iter().map(Vec::len).sum()
    }

    pub fn shard_sizes(&self) -> &[Vec<usize>] {
        &self.shard_sizes
    }

    /// `D_q`, the number of samples held under edge `q`.
    pub fn edge_sizes(&self) -> &[usize] {
        &self.edge_sizes
    }

    /// `N`, the total number of samples.
    pub fn total(&self) -> usize {
        self.total
    }

    /// `D_q / N` per edge.
    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// `|D_qk| / D_q` for each device of edge `q`.
    pub fn device_weights(&self, edge: usize) -> &[f64] {
        &self.device_weights[edge]
    }
}

/// Round structure and step parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub global_rounds: usize,
    pub edge_rounds: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub tie_policy: TiePolicy,
    pub rng_seed: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.global_rounds == 0 {
            return Err(ConfigError::Schedule("global_rounds must be >= 1".into()));
        }
        if self.edge_rounds == 0 {
            return Err(ConfigError::Schedule("edge_rounds must be >= 1".into()));
        }
        // mu = 0 is accepted: it freezes the model and is used as a sanity check.
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(ConfigError::Schedule(format!(
                "step_size must be a finite non-negative number, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Schedule("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Downlink sparsification of the broadcast model difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DownlinkConfig {
    pub enabled: bool,
    pub active_components: usize,
}

impl DownlinkConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            active_components: 0,
        }
    }

    pub fn with_components(n: usize) -> Self {
        Self {
            enabled: true,
            active_components: n,
        }
    }

    /// `n = round(fraction * d)`, clamped to `[1, d]`.
    pub fn from_fraction(fraction: f64, dim: usize) -> Self {
        let n = (fraction * dim as f64).round() as usize;
        Self::with_components(n.clamp(1, dim))
    }

    pub fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        if self.enabled && (self.active_components == 0 || self.active_components > dim) {
            return Err(ConfigError::Downlink {
                n: self.active_components,
                d: dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Dirichlet concentration; ignored in IID mode.
    pub alpha: f64,
    pub rng_seed: u64,
}

impl PartitionSpec {
    pub fn iid(rng_seed: u64) -> Self {
        Self {
            mode: PartitionMode::Iid,
            alpha: f64::INFINITY,
            rng_seed,
        }
    }

    pub fn dirichlet(alpha: f64, rng_seed: u64) -> Self {
        Self {
            mode: PartitionMode::Dirichlet,
            alpha,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mode == PartitionMode::Dirichlet && !(self.alpha > 0.0) {
            return Err(ConfigError::Partition(format!(
                "alpha must be > 0 in dirichlet mode, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}
