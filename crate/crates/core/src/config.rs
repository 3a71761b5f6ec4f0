//! Configuration of one active-learning run.

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricId;
use crate::models::ModelSpec;
use crate::pool::{Pool, TaskKind};

/// Items labeled per round: `ceil(fraction * train_len)`, at least one.
pub fn round_budget(train_len: usize, fraction: f64) -> usize {
    // The small offset keeps exact products such as 0.01 * 62500 from
    // rounding up on representation error.
    ((fraction * train_len as f64 - 1e-9).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Randomly labeled items before the first acquisition round.
    pub init_size: usize,
    /// Per-round budget as a fraction of the train split.
    pub round_fraction: f64,
    pub rounds: usize,
    pub seed: u64,
    pub acquisition: AcquisitionConfig,
    /// `None` picks the built-in model for the pool's task.
    pub model: Option<ModelSpec>,
    /// Empty picks the task's default metrics.
    pub metrics: Vec<MetricId>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            init_size: 500,
            round_fraction: 0.01,
            rounds: 10,
            seed: 0,
            acquisition: AcquisitionConfig::default(),
            model: None,
            metrics: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn round_budget(&self, train_len: usize) -> usize {
        round_budget(train_len, self.round_fraction)
    }

    pub fn model_for(&self, task: TaskKind) -> ModelSpec {
        self.model
            .clone()
            .unwrap_or_else(|| ModelSpec::default_for(task))
    }

    pub fn metrics_for(&self, task: TaskKind) -> Vec<MetricId> {
        if !self.metrics.is_empty() {
            return self.metrics.clone();
        }
        match task {
            TaskKind::Classification => vec![MetricId::Accuracy],
            TaskKind::SequenceGeneration => vec![MetricId::Bleu, MetricId::Ppl],
        }
    }

    /// Checks the configuration against `pool`.
    ///
    /// A schedule that would exhaust the train split is allowed; the run
    /// stops early with a warning instead.
    pub fn validate(&self, pool: &Pool) -> Result<()> {
        if self.init_size == 0 || self.rounds == 0 {
            return Err(Error::config("init_size and rounds must be positive"));
        }
        if !(self.round_fraction > 0.0 && self.round_fraction <= 1.0) {
            return Err(Error::config("round_fraction must lie in (0, 1]"));
        }
        let task = pool.task_kind();
        let train = pool.train_indices().len();
        if self.init_size > train {
            return Err(Error::config(format!(
                "init_size {} exceeds the {train} train items",
                self.init_size
            )));
        }
        self.acquisition.check_task(task)?;
        self.model_for(task).check_task(task)?;
        let mut seen = Vec::new();
        for m in self.metrics_for(task) {
            if m.task_kind() != task {
                return Err(Error::capability(format!(
                    "metric '{m}' does not apply to {task:?} tasks"
                )));
            }
            if m == MetricId::F1 && pool.num_classes() != Some(2) {
                return Err(Error::capability(
                    "f1 is defined for binary classification only",
                ));
            }
            if seen.contains(&m) {
                return Err(Error::config(format!("metric '{m}' listed twice")));
            }
            seen.push(m);
        }
        let needed = self.init_size + self.rounds * self.round_budget(train);
        if needed > train {
            log::warn!("schedule needs {needed} items but the train split has {train}; the run will stop early");
        }
        Ok(())
    }
}
