//! The trainable-model contract and the built-in models.

mod classifier;
mod external;
mod seqmodel;

use serde::{Deserialize, Serialize};

use crate::acquisition::{ProbMatrix, ProbStack};
use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::pool::{Pool, TaskKind};
use crate::rng::Rng;

pub use classifier::{
    bag_of_tokens, train_classifier, Classifier, ClassifierConfig, Gradients, Optimizer,
    PoolClassifier,
};
pub use external::{ExternalModel, ExternalSpec};
pub use seqmodel::{train_seqmodel, SeqModel, SeqModelConfig, EOS_OFFSET};

/// Greedy decoding output for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated tokens, end-of-sequence excluded.
    pub tokens: Vec<u32>,
    /// Log-probability of every decoding step, including the end step when
    /// one was produced.
    pub loglikelihoods: Vec<f64>,
}

/// What acquisition, simulation and analysis need from a trained model.
///
/// Trained models are immutable; every method takes pool indices and
/// returns rows in the same order.
pub trait ModelOracle: Send + Sync {
    fn name(&self) -> &str;

    fn task_kind(&self) -> TaskKind;

    fn supports_stochastic(&self) -> bool {
        false
    }

    fn predict_proba(&self, pool: &Pool, ids: &[usize]) -> Result<ProbMatrix>;

    /// `passes` forward passes with dropout active.
    fn predict_proba_stochastic(
        &self,
        _pool: &Pool,
        _ids: &[usize],
        _passes: usize,
        _rng: &mut Rng,
    ) -> Result<ProbStack> {
        Err(Error::capability("stochastic passes unsupported"))
    }

    fn embed(&self, pool: &Pool, ids: &[usize]) -> Result<FeatureView>;

    /// Output vectors. Classification models return their probability rows.
    fn output_features(&self, pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        let probs = self.predict_proba(pool, ids)?;
        FeatureView::probabilities(probs.into_inner(), ids.to_vec())
    }

    fn generate(&self, _pool: &Pool, _ids: &[usize]) -> Result<Vec<Generation>> {
        Err(Error::capability(format!(
            "model '{}' cannot generate sequences",
            self.name()
        )))
    }

    /// Teacher-forced log-likelihood of each reference token (plus the end
    /// token), for perplexity.
    fn reference_loglikelihoods(&self, _pool: &Pool, _ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        Err(Error::capability(format!(
            "model '{}' cannot score references",
            self.name()
        )))
    }
}

/// Serializable model choice; `fit` produces a trained oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Classifier(ClassifierConfig),
    Seq2seq(SeqModelConfig),
    External(ExternalSpec),
}

impl ModelSpec {
    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Classification => ModelSpec::Classifier(ClassifierConfig::default()),
            TaskKind::SequenceGeneration => ModelSpec::Seq2seq(SeqModelConfig::default()),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Classifier(_) => "classifier",
            ModelSpec::Seq2seq(_) => "seq2seq",
            ModelSpec::External(_) => "external",
        }
    }

    pub fn check_task(&self, task: TaskKind) -> Result<()> {
        let ok = match self {
            ModelSpec::Classifier(_) => task == TaskKind::Classification,
            ModelSpec::Seq2seq(_) => task == TaskKind::SequenceGeneration,
            ModelSpec::External(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::capability(format!(
                "model '{}' does not support {task:?} tasks",
                self.id()
            )))
        }
    }

    /// Trains a fresh model on `labeled`. The model's own seed is replaced
    /// by a draw from `rng`.
    pub fn fit(
        &self,
        pool: &Pool,
        labeled: &[usize],
        rng: &mut Rng,
    ) -> Result<Box<dyn ModelOracle>> {
        self.check_task(pool.task_kind())?;
        let seed = rng.next_seed();
        match self {
            ModelSpec::Classifier(cfg) => {
                let cfg = ClassifierConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(Box::new(PoolClassifier::fit(pool, labeled, &cfg)?))
            }
            ModelSpec::Seq2seq(cfg) => {
                let cfg = SeqModelConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(Box::new(train_seqmodel(pool, labeled, &cfg)?))
            }
            ModelSpec::External(spec) => {
                log::warn!("external model is not trainable; replaying stored matrices");
                Ok(Box::new(ExternalModel::load(pool, spec)?))
            }
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam over a flat parameter vector.
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(m: &mut ndarray::Array2<f64>) {
    for mut row in m.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}
