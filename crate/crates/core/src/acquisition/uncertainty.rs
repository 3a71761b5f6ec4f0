//! Output-uncertainty scores. Every score here follows the same convention:
//! lower scores are selected first.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::check_probability_rows;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Rows are candidates, columns classes; every row is a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::invalid("probability matrix has no classes"));
        }
        check_probability_rows(m.view())?;
        Ok(Self(m))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(argmax).collect()
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ProbMatrix {
        ProbMatrix(self.0.select(Axis(0), rows))
    }
}

/// First index of the largest entry.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `T` stochastic forward passes over the same candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStack {
    passes: Vec<ProbMatrix>,
}

impl ProbStack {
    pub fn new(passes: Vec<ProbMatrix>) -> Result<Self> {
        if passes.len() < 2 {
            return Err(Error::invalid(
                "a probability stack needs at least 2 passes",
            ));
        }
        let shape = passes[0].view().dim();
        if passes.iter().any(|p| p.view().dim() != shape) {
            return Err(Error::invalid("stochastic passes differ in shape"));
        }
        Ok(Self { passes })
    }

    pub fn passes(&self) -> &[ProbMatrix] {
        &self.passes
    }

    pub fn nrows(&self) -> usize {
        self.passes[0].nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyDirection {
    /// Select the highest-entropy candidates first.
    #[default]
    Max,
    /// Select the lowest-entropy candidates first.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyMethod {
    LeastConfidence,
    Margin,
    Entropy(EntropyDirection),
    Gini,
}

fn entropy(row: ArrayView1<'_, f64>) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Per-row scores:
/// * least confidence: top-1 probability
/// * margin: top-1 minus top-2 probability
/// * gini: sum of squared probabilities
/// * entropy: negative Shannon entropy (`0 ln 0 = 0`), or the entropy itself
///   when the direction is [`EntropyDirection::Min`]
pub fn score_uncertainty(probs: &ProbMatrix, method: UncertaintyMethod) -> Result<Vec<f64>> {
    if probs.num_classes() < 2 {
        return Err(Error::invalid("uncertainty scores need at least 2 classes"));
    }
    Ok(probs
        .view()
        .rows()
        .into_iter()
        .map(|row| match method {
            UncertaintyMethod::LeastConfidence => row.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
            UncertaintyMethod::Margin => {
                let mut top = [f64::NEG_INFINITY; 2];
                for &p in row.iter() {
                    if p > top[0] {
                        top[1] = top[0];
                        top[0] = p;
                    } else if p > top[1] {
                        top[1] = p;
                    }
                }
                top[0] - top[1]
            }
            UncertaintyMethod::Gini => row.iter().map(|p| p * p).sum(),
            UncertaintyMethod::Entropy(EntropyDirection::Max) => -entropy(row),
            UncertaintyMethod::Entropy(EntropyDirection::Min) => entropy(row),
        })
        .collect())
}

/// Modal-label agreement over the stochastic passes: `count(mode) / T`.
pub fn score_bald(stack: &ProbStack) -> Result<Vec<f64>> {
    let t = stack.passes.len();
    let labels: Vec<Vec<usize>> = stack.passes.iter().map(|p| p.argmax_rows()).collect();
    let classes = stack.passes[0].num_classes();
    Ok((0..stack.nrows())
        .map(|i| {
            let mut counts = vec![0usize; classes];
            for pass in &labels {
                counts[pass[i]] += 1;
            }
            let mode = counts.iter().copied().max().unwrap_or(0);
            mode as f64 / t as f64
        })
        .collect())
}

/// `KL(p || q)` with both sides floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&a, &b)| {
            let a = a.max(PROB_FLOOR);
            let b = b.max(PROB_FLOOR);
            a * (a / b).ln()
        })
        .sum()
}

/// Indices of the `k` rows of `labeled` nearest to `query` (euclidean, ties
/// by row index), nearest first.
pub fn nearest_rows(
    query: ArrayView1<'_, f64>,
    labeled: ArrayView2<'_, f64>,
    k: usize,
) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = labeled
        .rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            let dist = query
                .iter()
                .zip(row.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            (dist, r)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, r)| r).collect()
}

/// Contrastive scores: for each candidate, the mean `KL(candidate || neighbor)`
/// over its `k` nearest labeled neighbours in feature space, negated so that
/// the most divergent candidates come first.
pub fn score_cal(
    cand_probs: &ProbMatrix,
    cand_feats: ArrayView2<'_, f64>,
    labeled_probs: &ProbMatrix,
    labeled_feats: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("CAL needs k >= 1 neighbours"));
    }
    if k > labeled_probs.nrows() {
        return Err(Error::invalid(format!(
            "CAL needs k = {k} neighbours but only {} items are labeled",
            labeled_probs.nrows()
        )));
    }
    if cand_feats.nrows() != cand_probs.nrows() || labeled_feats.nrows() != labeled_probs.nrows() {
        return Err(Error::invalid(
            "CAL features and probabilities are not row-aligned",
        ));
    }
    if cand_feats.ncols() != labeled_feats.ncols() {
        return Err(Error::invalid("CAL feature views differ in dimension"));
    }
    if cand_probs.num_classes() != labeled_probs.num_classes() {
        return Err(Error::invalid(
            "CAL probability matrices differ in class count",
        ));
    }
    let cp = cand_probs.view();
    let lp = labeled_probs.view();
    Ok((0..cp.nrows())
        .into_par_iter()
        .map(|i| {
            let nbrs = nearest_rows(cand_feats.row(i), labeled_feats, k);
            let div = nbrs
                .iter()
                .map(|&j| kl_divergence(cp.row(i), lp.row(j)))
                .sum::<f64>()
                / k as f64;
            -div
        })
        .collect())
}
