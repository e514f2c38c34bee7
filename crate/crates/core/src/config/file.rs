//! The structured configuration file (TOML).
//!
//! Every section is optional and falls back to the default two-tier setup:
//! 4 edges of 5 devices, 30 global rounds of 30 edge steps, `mu = 5e-3`,
//! `B = 400`. Unknown keys anywhere in the file are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ConfigError, DownlinkConfig, PartitionMode, PartitionSpec, Schedule};
use crate::compress::TiePolicy;
use crate::model::{Activation, InitScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Device signs, edge majority vote, cloud weighted average.
    #[default]
    HierSignsgd,
    /// Full-precision baseline: edges average device gradients.
    HierSgd,
    /// Sign protocol with a sparsified downlink model broadcast.
    HierSignsgdQdl,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::HierSignsgd => "hier_signsgd",
            Algorithm::HierSgd => "hier_sgd",
            Algorithm::HierSignsgdQdl => "hier_signsgd_qdl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hier_signsgd" => Some(Algorithm::HierSignsgd),
            "hier_sgd" => Some(Algorithm::HierSgd),
            "hier_signsgd_qdl" => Some(Algorithm::HierSignsgdQdl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceCount {
    Uniform(usize),
    PerEdge(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub num_edges: usize,
    pub devices_per_edge: DeviceCount,
    /// When set, clustering sweeps must keep `Q * M` equal to this.
    pub device_budget: Option<usize>,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            num_edges: 4,
            devices_per_edge: DeviceCount::Uniform(5),
            device_budget: None,
        }
    }
}

impl HierarchySection {
    pub fn layout(&self) -> Result<Vec<usize>, ConfigError> {
        let layout = match &self.devices_per_edge {
            DeviceCount::Uniform(m) => vec![*m; self.num_edges],
            DeviceCount::PerEdge(list) => {
                if list.len() != self.num_edges {
                    return Err(ConfigError::File(format!(
                        "devices_per_edge lists {} edges but num_edges = {}",
                        list.len(),
                        self.num_edges
                    )));
                }
                list.clone()
            }
        };
        if layout.is_empty() {
            return Err(ConfigError::NoEdges);
        }
        if let Some(edge) = layout.iter().position(|&m| m == 0) {
            return Err(ConfigError::EmptyEdge { edge });
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub global_rounds: usize,
    pub edge_rounds: usize,
    pub step_size: f64,
    /// Step size used instead of `step_size` when running `hier_sgd`.
    pub sgd_step_size: Option<f64>,
    pub batch_size: usize,
    pub tie_policy: TiePolicy,
    pub seed: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            global_rounds: 30,
            edge_rounds: 30,
            step_size: 5e-3,
            sgd_step_size: None,
            batch_size: 400,
            tie_policy: TiePolicy::Random,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub mode: PartitionMode,
    pub alpha: f64,
    /// Redraws allowed when a Dirichlet draw leaves a device empty.
    pub max_retries: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Iid,
            alpha: 0.3,
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DownlinkSection {
    pub enabled: bool,
    pub active_components: Option<usize>,
    /// Alternative to `active_components`: `n / d`.
    pub active_fraction: Option<f64>,
}

impl DownlinkSection {
    pub fn resolve(&self, dim: usize) -> Result<DownlinkConfig, ConfigError> {
        if !self.enabled {
            return Ok(DownlinkConfig::disabled());
        }
        let cfg = match (self.active_components, self.active_fraction) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::File(
                    "set only one of downlink.active_components and downlink.active_fraction".into(),
                ))
            }
            (Some(n), None) => DownlinkConfig::with_components(n),
            (None, Some(f)) => DownlinkConfig::from_fraction(f, dim),
            (None, None) => DownlinkConfig::with_components(dim),
        };
        cfg.validate(dim)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub activation: Activation,
    pub init: InitScheme,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 30,
            activation: Activation::Sigmoid,
            init: InitScheme::UniformFanIn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory searched for `*train-images*`-style IDX files when the
    /// explicit paths below are not set.
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Cap on the number of training samples (drawn without replacement).
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Samples in the fixed batch used to estimate `||grad F||_1`.
    pub grad_batch: usize,
    /// Cap on training samples used for train loss/accuracy; `None` uses all.
    pub train_samples: Option<usize>,
    /// Trajectory snapshots at which `zeta` is estimated (0 disables).
    pub zeta_probes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            grad_batch: 4096,
            train_samples: None,
            zeta_probes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Save `w^(t)` after every global round as a parameter blob under
    /// `<out>/checkpoints/<run>/round_<t>.bin` (MLP runs only).
    pub checkpoints: bool,
}

/// Separable quadratic objective used with `--synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub dim: usize,
    pub curvature_min: f64,
    pub curvature_max: f64,
    /// Per-sample gradient noise; a batch of `B` sees `noise_std / sqrt(B)`.
    pub noise_std: f64,
    /// Std of the fixed per-device gradient offsets (0 gives `zeta = 0`).
    pub heterogeneity_std: f64,
    /// Optimum coordinates are drawn from `U(-optimum_scale, optimum_scale)`.
    pub optimum_scale: f64,
    /// Initial point coordinates are drawn from `U(-init_scale, init_scale)`.
    pub init_scale: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            dim: 50,
            curvature_min: 0.5,
            curvature_max: 2.0,
            noise_std: 1.0,
            heterogeneity_std: 0.0,
            optimum_scale: 1.0,
            init_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub hierarchy: HierarchySection,
    pub schedule: ScheduleSection,
    pub partition: PartitionSection,
    pub downlink: DownlinkSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub synthetic: SyntheticSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::File(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Data paths are relative to the config file.
        if let Some(dir) = path.parent() {
            cfg.data.resolve_relative(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.hierarchy.layout()?;
        self.schedule(self.schedule.seed).validate()?;
        self.partition_spec(self.schedule.seed).validate()?;
        if let Some(mu) = self.schedule.sgd_step_size {
            if !(mu >= 0.0) {
                return Err(ConfigError::Schedule(format!("sgd_step_size must be >= 0, got {mu}")));
            }
        }
        if self.model.hidden == 0 {
            return Err(ConfigError::File("model.hidden must be >= 1".into()));
        }
        if self.eval.grad_batch == 0 {
            return Err(ConfigError::File("eval.grad_batch must be >= 1".into()));
        }
        let s = &self.synthetic;
        if s.dim == 0 || !(s.curvature_min > 0.0) || s.curvature_max < s.curvature_min {
            return Err(ConfigError::File(
                "synthetic: need dim >= 1 and 0 < curvature_min <= curvature_max".into(),
            ));
        }
        if !(s.noise_std >= 0.0) || !(s.heterogeneity_std >= 0.0) {
            return Err(ConfigError::File("synthetic: noise levels must be >= 0".into()));
        }
        Ok(())
    }

    /// The schedule for one run, seeded with `seed`.
    pub fn schedule(&self, seed: u64) -> Schedule {
        let s = &self.schedule;
        let step_size = match (self.algorithm, s.sgd_step_size) {
            (Algorithm::HierSgd, Some(mu)) => mu,
            _ => s.step_size,
        };
        Schedule {
            global_rounds: s.global_rounds,
            edge_rounds: s.edge_rounds,
            step_size,
            batch_size: s.batch_size,
            tie_policy: s.tie_policy,
            rng_seed: seed,
        }
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        match self.partition.mode {
            PartitionMode::Iid => PartitionSpec::iid(seed),
            PartitionMode::Dirichlet => PartitionSpec::dirichlet(self.partition.alpha, seed),
        }
    }
}

impl DataSection {
    fn resolve_relative(&mut self, base: &Path) {
        for p in [
            &mut self.dir,
            &mut self.train_images,
            &mut self.train_labels,
            &mut self.test_images,
            &mut self.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.hierarchy.layout().unwrap(), vec![5; 4]);
        let s = cfg.schedule(9);
        assert_eq!((s.global_rounds, s.edge_rounds, s.batch_size), (30, 30, 400));
        assert_eq!(s.step_size, 5e-3);
        assert_eq!(s.rng_seed, 9);
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            algorithm = "hier_sgd"
            [hierarchy]
            num_edges = 2
            devices_per_edge = [3, 1]
            [schedule]
            step_size = 0.005
            sgd_step_size = 1.0
            tie_policy = "plus_one"
            [partition]
            mode = "dirichlet"
            alpha = 0.5
            [downlink]
            enabled = true
            active_fraction = 0.06
            "#,
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::HierSgd);
        assert_eq!(cfg.hierarchy.layout().unwrap(), vec![3, 1]);
        assert_eq!(cfg.schedule(0).step_size, 1.0);
        assert_eq!(cfg.schedule.tie_policy, TiePolicy::PlusOne);
        assert_eq!(cfg.partition_spec(3), PartitionSpec::dirichlet(0.5, 3));
        assert_eq!(cfg.downlink.resolve(100).unwrap().active_components, 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[schedule]\nstepsize = 0.1").is_err());
        assert!(ExperimentConfig::from_toml_str("[nope]\nx = 1").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[schedule]\nglobal_rounds = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("[partition]\nmode = \"dirichlet\"\nalpha = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("[hierarchy]\nnum_edges = 2\ndevices_per_edge = [1]").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
