use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::space::SequenceSpace;
use super::{cosine_distance, euclidean, DistanceSpace, Metric, TokenEmbeddingTable};
use crate::error::{Error, Result};
use crate::matrix_io::write_alfv;
use crate::parallel::with_workers;
use crate::pool::Token;
use crate::rng::Rng;

const SYMMETRY_TOL: f64 = 1e-9;

pub enum PairwiseItems<'a> {
    Vectors(ArrayView2<'a, f64>),
    Sequences(&'a [Vec<Token>]),
}

impl PairwiseItems<'_> {
    fn len(&self) -> usize {
        match self {
            PairwiseItems::Vectors(m) => m.nrows(),
            PairwiseItems::Sequences(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PairwiseOptions<'a> {
    /// Thread count; 0 uses the global pool.
    pub workers: usize,
    pub subsample: Option<Subsample>,
    /// Required by [`Metric::GreedyMatch`].
    pub table: Option<&'a TokenEmbeddingTable>,
}

/// Symmetric matrix of pairwise distances. Row `r` corresponds to item
/// `ids[r]`; without subsampling `ids` is `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    metric: Metric,
    ids: Vec<usize>,
    subsample: Option<Subsample>,
    index: HashMap<usize, usize>,
}

/// JSON sidecar written next to an ALFV distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub metric: Metric,
    pub n: usize,
    pub ids: Vec<usize>,
    pub subsample: Option<Subsample>,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal, finiteness and non-negativity.
    pub fn new(
        data: Vec<f64>,
        n: usize,
        metric: Metric,
        ids: Vec<usize>,
        subsample: Option<Subsample>,
    ) -> Result<Self> {
        if data.len() != n * n || ids.len() != n {
            return Err(Error::invalid("distance matrix shape mismatch"));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::invalid(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = data[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!(
                        "invalid distance {v} at ({i}, {j})"
                    )));
                }
                if (v - data[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!("asymmetric distance at ({i}, {j})")));
                }
            }
        }
        let index = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        Ok(Self {
            n,
            data,
            metric,
            ids,
            subsample,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn subsample(&self) -> Option<Subsample> {
        self.subsample
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n, self.n), self.data.clone()).expect("square")
    }

    /// Re-addresses rows through `map`: row `r` now stands for `map[ids[r]]`.
    pub fn remap_ids(mut self, map: &[usize]) -> Result<Self> {
        let ids = self
            .ids
            .iter()
            .map(|&i| {
                map.get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid("id map too short"))
            })
            .collect::<Result<Vec<_>>>()?;
        self.index = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        self.ids = ids;
        Ok(self)
    }

    pub fn sidecar(&self) -> MatrixSidecar {
        MatrixSidecar {
            metric: self.metric,
            n: self.n,
            ids: self.ids.clone(),
            subsample: self.subsample,
        }
    }

    pub fn write_alfv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_alfv(out, &self.to_array())
    }
}

impl DistanceSpace for DistanceMatrix {
    fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let row = |id| {
            self.index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("item {id} is not in the distance matrix")))
        };
        Ok(self.get(row(a)?, row(b)?))
    }

    fn metric(&self) -> Metric {
        self.metric
    }
}

/// Computes all pairwise distances.
///
/// Only the upper triangle is evaluated: each row block `i` owns the pairs
/// `(i, j > i)` and is computed independently, then mirrored. With a
/// subsample the matrix covers a seeded uniform subset (without replacement)
/// and `ids` records which input rows were used, in ascending order.
pub fn pairwise_matrix(
    items: PairwiseItems<'_>,
    metric: Metric,
    opts: &PairwiseOptions<'_>,
) -> Result<DistanceMatrix> {
    let total = items.len();
    let ids: Vec<usize> = match opts.subsample {
        Some(s) if s.count < total => {
            let all: Vec<usize> = (0..total).collect();
            let mut picked = Rng::new(s.seed).sample(&all, s.count);
            picked.sort_unstable();
            picked
        }
        _ => (0..total).collect(),
    };
    let n = ids.len();
    if n < 2 {
        return Err(Error::invalid("pairwise matrix needs at least 2 items"));
    }

    let upper: Vec<Vec<f64>> = match items {
        PairwiseItems::Vectors(m) => {
            if !metric.is_vector() {
                return Err(Error::invalid(format!(
                    "{metric} needs token sequences, got vectors"
                )));
            }
            let rows: Vec<_> = ids.iter().map(|&i| m.row(i)).collect();
            with_workers(opts.workers, || {
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        ((i + 1)..n)
                            .map(|j| match metric {
                                Metric::Cosine => cosine_distance(rows[i], rows[j]),
                                _ => euclidean(rows[i], rows[j]),
                            })
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
        PairwiseItems::Sequences(seqs) => {
            if metric.is_vector() {
                return Err(Error::invalid(format!(
                    "{metric} needs vectors, got token sequences"
                )));
            }
            let picked: Vec<Vec<Token>> = ids.iter().map(|&i| seqs[i].clone()).collect();
            let local: Vec<usize> = (0..n).collect();
            let space = SequenceSpace::from_sequences(&local, picked, metric, opts.table)?;
            with_workers(opts.workers, || {
                (0..n)
                    .into_par_iter()
                    .map(|i| ((i + 1)..n).map(|j| space.slot_distance(i, j)).collect())
                    .collect()
            })
        }
    };

    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            let j = i + 1 + k;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix::new(
        data,
        n,
        metric,
        ids,
        opts.subsample.filter(|s| s.count < total),
    )
}
