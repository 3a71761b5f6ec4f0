//! Feature views: the representation acquisition functions operate on.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelOracle;
use crate::pool::{Pool, TaskKind};

/// Tolerance on probability-row sums.
pub const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Padded integer token ids.
    Token,
    /// Model hidden representation.
    Embedding,
    /// Model output distribution.
    Output,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Token => "token",
            FeatureKind::Embedding => "embedding",
            FeatureKind::Output => "output",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" | "tokens" => Ok(FeatureKind::Token),
            "embedding" | "embeddings" => Ok(FeatureKind::Embedding),
            "output" | "outputs" => Ok(FeatureKind::Output),
            other => Err(Error::config(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// Token padding for [`FeatureKind::Token`] views. Truncation keeps the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub len: usize,
    pub pad_id: u32,
}

impl Default for Padding {
    fn default() -> Self {
        Self {
            len: 256,
            pad_id: 0,
        }
    }
}

/// An `n x d` real matrix over pool items. Row `r` describes pool item
/// `item_ids[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    matrix: Array2<f64>,
    kind: FeatureKind,
    item_ids: Vec<usize>,
    rows: HashMap<usize, usize>,
}

impl FeatureView {
    pub fn new(matrix: Array2<f64>, kind: FeatureKind, item_ids: Vec<usize>) -> Result<Self> {
        if matrix.nrows() != item_ids.len() {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows but {} item ids",
                matrix.nrows(),
                item_ids.len()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "feature matrix contains NaN or infinite entries",
            ));
        }
        let mut rows = HashMap::with_capacity(item_ids.len());
        for (r, &id) in item_ids.iter().enumerate() {
            if rows.insert(id, r).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate item id {id} in feature view"
                )));
            }
        }
        Ok(Self {
            matrix,
            kind,
            item_ids,
            rows,
        })
    }

    /// An output view whose rows must be probability vectors.
    pub fn probabilities(matrix: Array2<f64>, item_ids: Vec<usize>) -> Result<Self> {
        check_probability_rows(matrix.view())?;
        Self::new(matrix, FeatureKind::Output, item_ids)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_index(&self, id: usize) -> Option<usize> {
        self.rows.get(&id).copied()
    }

    pub fn row(&self, id: usize) -> Option<ArrayView1<'_, f64>> {
        self.row_index(id).map(|r| self.matrix.row(r))
    }

    /// Rows for `ids`, in the given order.
    pub fn rows_for(&self, ids: &[usize]) -> Result<Array2<f64>> {
        let idx = ids
            .iter()
            .map(|&id| {
                self.row_index(id)
                    .ok_or_else(|| Error::invalid(format!("item {id} is not in the feature view")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.matrix.select(Axis(0), &idx))
    }

    /// Restriction of the view to `ids`, in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<FeatureView> {
        FeatureView::new(self.rows_for(ids)?, self.kind, ids.to_vec())
    }
}

pub(crate) fn check_probability_rows(m: ArrayView2<'_, f64>) -> Result<()> {
    for (r, row) in m.rows().into_iter().enumerate() {
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid(format!(
                "probability row {r} has negative or non-finite entries"
            )));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("probability row {r} sums to {s}")));
        }
    }
    Ok(())
}

/// Token rows: each sequence right-padded with `pad_id` and truncated to
/// `len`, cast to reals.
pub fn token_matrix(pool: &Pool, ids: &[usize], padding: Padding) -> Result<Array2<f64>> {
    if padding.len < 1 {
        return Err(Error::invalid("pad_len must be at least 1"));
    }
    let mut m = Array2::from_elem((ids.len(), padding.len), padding.pad_id as f64);
    for (r, &id) in ids.iter().enumerate() {
        for (c, &t) in pool.tokens(id).iter().take(padding.len).enumerate() {
            m[[r, c]] = t as f64;
        }
    }
    Ok(m)
}

/// Builds the requested view over `ids`.
///
/// Token views need no model. Embedding and output views are read from the
/// trained `model`; for sequence pools the output view is the mean of the
/// per-position decoder distributions, so its width is the output vocabulary.
pub fn make_feature_view(
    pool: &Pool,
    ids: &[usize],
    kind: FeatureKind,
    model: Option<&dyn ModelOracle>,
    padding: Padding,
) -> Result<FeatureView> {
    match kind {
        FeatureKind::Token => FeatureView::new(
            token_matrix(pool, ids, padding)?,
            FeatureKind::Token,
            ids.to_vec(),
        ),
        FeatureKind::Embedding => {
            let model = model
                .ok_or_else(|| Error::capability("embedding features require a trained model"))?;
            model.embed(pool, ids)
        }
        FeatureKind::Output => {
            let model = model
                .ok_or_else(|| Error::capability("output features require a trained model"))?;
            let view = model.output_features(pool, ids)?;
            if pool.task_kind() == TaskKind::Classification {
                check_probability_rows(view.matrix().view())?;
            }
            Ok(view)
        }
    }
}
