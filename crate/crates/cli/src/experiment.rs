//! The experiment configuration file shared by `simulate` and `study`.

use std::fs;
use std::path::{Path, PathBuf};

use alcode::acquisition::AcquisitionConfig;
use alcode::analysis::StudyConfig;
use alcode::config::RunConfig;
use alcode::metrics::MetricId;
use alcode::models::ModelSpec;
use alcode::pool::{load_pool, Pool, PoolSchema, TaskKind};
use alcode::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub path: PathBuf,
    #[serde(default)]
    pub task_kind: Option<TaskKind>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl PoolSection {
    pub fn load(&self) -> Result<Pool> {
        let schema = PoolSchema {
            task_kind: self.task_kind,
            vocab_size: self.vocab_size,
            num_classes: self.num_classes,
        };
        load_pool(&self.path, &schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub init_size: usize,
    pub round_fraction: f64,
    pub rounds: usize,
    /// Fractions of the train split reported in the comparison table.
    pub checkpoints: Vec<f64>,
}

impl Default for Budgets {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            init_size: run.init_size,
            round_fraction: run.round_fraction,
            rounds: run.rounds,
            checkpoints: Vec::new(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_plot() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pool: PoolSection,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// One entry per compared method.
    #[serde(default)]
    pub acquisition: Vec<AcquisitionConfig>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub metrics: Vec<MetricId>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub study: Option<StudyConfig>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_plot")]
    pub plot: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("invalid experiment config {}: {e}", path.display()))
        })?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    fn check_shape(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Run configuration for one acquisition entry and seed.
    pub fn run_config(&self, acquisition: &AcquisitionConfig, seed: u64) -> RunConfig {
        RunConfig {
            init_size: self.budgets.init_size,
            round_fraction: self.budgets.round_fraction,
            rounds: self.budgets.rounds,
            seed,
            acquisition: acquisition.clone(),
            model: self.model.clone(),
            metrics: self.metrics.clone(),
        }
    }
}
