//! Replays matrices exported from an external model.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::ModelOracle;
use crate::acquisition::ProbMatrix;
use crate::error::{Error, Result};
use crate::features::{check_probability_rows, FeatureKind, FeatureView};
use crate::matrix_io::load_matrix;
use crate::pool::{Pool, TaskKind};

/// Matrix files (ALFV or CSV) plus a JSON list of the original pool ids of
/// their rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Class probabilities (classification) or output vectors.
    #[serde(default)]
    pub proba: Option<PathBuf>,
    #[serde(default)]
    pub embed: Option<PathBuf>,
    pub ids: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExternalModel {
    task: TaskKind,
    outputs: Option<Array2<f64>>,
    embeddings: Option<Array2<f64>>,
    /// Pool index -> matrix row.
    rows: HashMap<usize, usize>,
}

impl ExternalModel {
    pub fn load(pool: &Pool, spec: &ExternalSpec) -> Result<Self> {
        let ids: Vec<i64> = serde_json::from_str(&fs::read_to_string(&spec.ids)?)?;
        let outputs = spec.proba.as_ref().map(load_matrix).transpose()?;
        let embeddings = spec.embed.as_ref().map(load_matrix).transpose()?;
        Self::from_matrices(pool, &ids, outputs, embeddings)
    }

    /// `ids` are original pool ids, one per matrix row.
    pub fn from_matrices(
        pool: &Pool,
        ids: &[i64],
        outputs: Option<Array2<f64>>,
        embeddings: Option<Array2<f64>>,
    ) -> Result<Self> {
        if outputs.is_none() && embeddings.is_none() {
            return Err(Error::config(
                "external model needs a probability or embedding matrix",
            ));
        }
        for (name, m) in [("probability", &outputs), ("embedding", &embeddings)] {
            if let Some(m) = m {
                if m.nrows() != ids.len() {
                    return Err(Error::invalid(format!(
                        "{name} matrix has {} rows but the id list has {}",
                        m.nrows(),
                        ids.len()
                    )));
                }
            }
        }
        if let Some(m) = &outputs {
            if pool.task_kind() == TaskKind::Classification {
                check_probability_rows(m.view())?;
                if let Some(c) = pool.num_classes() {
                    if m.ncols() != c {
                        return Err(Error::invalid(format!(
                            "probability matrix has {} columns for {c} classes",
                            m.ncols()
                        )));
                    }
                }
            }
        }
        let mut rows = HashMap::with_capacity(ids.len());
        for (r, &orig) in ids.iter().enumerate() {
            let pos = pool
                .position_of(orig)
                .ok_or_else(|| Error::invalid(format!("id {orig} is not in the pool")))?;
            if rows.insert(pos, r).is_some() {
                return Err(Error::invalid(format!("duplicate id {orig} in id list")));
            }
        }
        Ok(Self {
            task: pool.task_kind(),
            outputs,
            embeddings,
            rows,
        })
    }

    fn take(&self, m: &Option<Array2<f64>>, what: &str, ids: &[usize]) -> Result<Array2<f64>> {
        let m = m
            .as_ref()
            .ok_or_else(|| Error::capability(format!("no {what} matrix was supplied")))?;
        let rows = ids
            .iter()
            .map(|id| {
                self.rows
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no {what} row for pool item {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(m.select(Axis(0), &rows))
    }
}

impl ModelOracle for ExternalModel {
    fn name(&self) -> &str {
        "external"
    }

    fn task_kind(&self) -> TaskKind {
        self.task
    }

    fn predict_proba(&self, _pool: &Pool, ids: &[usize]) -> Result<ProbMatrix> {
        if self.task != TaskKind::Classification {
            return Err(Error::capability(
                "external outputs are not class probabilities",
            ));
        }
        ProbMatrix::new(self.take(&self.outputs, "probability", ids)?)
    }

    fn embed(&self, _pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        FeatureView::new(
            self.take(&self.embeddings, "embedding", ids)?,
            FeatureKind::Embedding,
            ids.to_vec(),
        )
    }

    fn output_features(&self, _pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        FeatureView::new(
            self.take(&self.outputs, "probability", ids)?,
            FeatureKind::Output,
            ids.to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{Label, PoolItem, Split};
    use crate::rng::Rng;
    use ndarray::array;

    fn pool() -> Pool {
        let items = (0..3)
            .map(|i| PoolItem {
                id: 10 + i,
                tokens: vec![1],
                label: Label::Class(0),
                split: Split::Train,
            })
            .collect();
        Pool::new(TaskKind::Classification, 4, Some(2), items).unwrap()
    }

    #[test]
    fn rows_pass_through_by_original_id() {
        let p = pool();
        let proba = array![[0.2, 0.8], [0.5, 0.5], [1.0, 0.0]];
        let embed = Array2::from_elem((3, 128), 0.5);
        let m = ExternalModel::from_matrices(&p, &[12, 10, 11], Some(proba), Some(embed)).unwrap();
        let got = m.predict_proba(&p, &[0, 2]).unwrap();
        assert_eq!(got.view(), array![[0.5, 0.5], [0.2, 0.8]]);
        assert_eq!(m.embed(&p, &[0, 1, 2]).unwrap().dim(), 128);
    }

    #[test]
    fn stochastic_passes_unsupported() {
        let p = pool();
        let m = ExternalModel::from_matrices(
            &p,
            &[10, 11, 12],
            Some(array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]),
            None,
        )
        .unwrap();
        assert!(!m.supports_stochastic());
        let err = m
            .predict_proba_stochastic(&p, &[0], 2, &mut Rng::new(0))
            .unwrap_err();
        assert_eq!(err.to_string(), "stochastic passes unsupported");
    }

    #[test]
    fn misaligned_and_invalid_inputs_rejected() {
        let p = pool();
        assert!(
            ExternalModel::from_matrices(&p, &[10, 11], Some(array![[1.0, 0.0]]), None).is_err()
        );
        assert!(ExternalModel::from_matrices(&p, &[10], Some(array![[0.7, 0.7]]), None).is_err());
        assert!(ExternalModel::from_matrices(&p, &[99], Some(array![[1.0, 0.0]]), None).is_err());
    }
}
