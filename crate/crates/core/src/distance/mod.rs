//! Distance and similarity kernels plus the pairwise-matrix engine.

mod pairwise;
mod space;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bleu_profiles, NgramProfile, MAX_NGRAM};
use crate::pool::Token;
use crate::rng::Rng;

pub use pairwise::{
    pairwise_matrix, DistanceMatrix, MatrixSidecar, PairwiseItems, PairwiseOptions, Subsample,
};
pub use space::{DistanceSpace, SequenceSpace, VectorSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
    Bleu,
    /// Greedy token matching over a static token-embedding table.
    #[serde(alias = "codebertscore")]
    GreedyMatch,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Cosine,
        Metric::Euclidean,
        Metric::Bleu,
        Metric::GreedyMatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Bleu => "bleu",
            Metric::GreedyMatch => "greedy_match",
        }
    }

    /// Vector metrics act on feature rows; the others on token sequences.
    pub fn is_vector(self) -> bool {
        matches!(self, Metric::Euclidean | Metric::Cosine)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "bleu" => Ok(Metric::Bleu),
            "greedy_match" | "greedy-match" | "codebertscore" => Ok(Metric::GreedyMatch),
            other => Err(Error::config(format!("unknown distance method '{other}'"))),
        }
    }
}

fn check_dims(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(a, b)?;
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("zero-norm vector"));
    }
    Ok((1.0 - a.dot(&b) / (na * nb)).clamp(0.0, 2.0))
}

/// `1 - (bleu(a, b) + bleu(b, a)) / 2`.
pub fn bleu_distance(a: &[Token], b: &[Token]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("bleu distance needs non-empty sequences"));
    }
    Ok(bleu_distance_profiles(
        &NgramProfile::new(a),
        &NgramProfile::new(b),
    ))
}

pub(crate) fn bleu_distance_profiles(a: &NgramProfile, b: &NgramProfile) -> f64 {
    let s = 0.5 * (bleu_profiles(a, b, MAX_NGRAM) + bleu_profiles(b, a, MAX_NGRAM));
    (1.0 - s).clamp(0.0, 1.0)
}

/// One embedding per token id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingTable {
    table: Array2<f64>,
}

impl TokenEmbeddingTable {
    pub fn new(table: Array2<f64>) -> Result<Self> {
        if table.ncols() == 0 {
            return Err(Error::invalid("embedding width must be at least 1"));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "embedding table contains NaN or infinite entries",
            ));
        }
        Ok(Self { table })
    }

    /// Standard-normal entries drawn from `rng`.
    pub fn random(vocab_size: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        let table = Array2::from_shape_simple_fn((vocab_size, width), || rng.normal());
        Self::new(table)
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn width(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    /// Rows scaled to unit length; all-zero rows stay zero.
    pub(crate) fn normalized(&self) -> Array2<f64> {
        let mut t = self.table.clone();
        for mut row in t.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        t
    }

    fn check_tokens(&self, s: &[Token]) -> Result<()> {
        if let Some(&t) = s.iter().find(|&&t| t as usize >= self.vocab_size()) {
            return Err(Error::invalid(format!(
                "token {t} out of table range (vocab {})",
                self.vocab_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyMatch {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl GreedyMatch {
    /// `1 - f`, floored at zero.
    pub fn distance(&self) -> f64 {
        (1.0 - self.f).max(0.0)
    }
}

/// Greedy token matching: every token of `a` is matched to its most similar
/// token of `b` (precision) and vice versa (recall), with cosine similarity
/// between token embeddings.
pub fn greedy_match_similarity(
    a: &[Token],
    b: &[Token],
    table: &TokenEmbeddingTable,
) -> Result<GreedyMatch> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("greedy match needs non-empty sequences"));
    }
    table.check_tokens(a)?;
    table.check_tokens(b)?;
    Ok(greedy_match_normalized(a, b, &table.normalized()))
}

pub(crate) fn greedy_match_normalized(a: &[Token], b: &[Token], unit: &Array2<f64>) -> GreedyMatch {
    let mut row_max = vec![f64::NEG_INFINITY; a.len()];
    let mut col_max = vec![f64::NEG_INFINITY; b.len()];
    for (i, &ta) in a.iter().enumerate() {
        let ea = unit.row(ta as usize);
        for (j, &tb) in b.iter().enumerate() {
            let s = ea.dot(&unit.row(tb as usize));
            row_max[i] = row_max[i].max(s);
            col_max[j] = col_max[j].max(s);
        }
    }
    let precision = row_max.iter().sum::<f64>() / a.len() as f64;
    let recall = col_max.iter().sum::<f64>() / b.len() as f64;
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    GreedyMatch {
        precision,
        recall,
        f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn euclidean_examples() {
        assert_eq!(
            euclidean(array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap(),
            5.0
        );
        let x = array![1.5, -2.0, 7.0];
        assert_eq!(euclidean(x.view(), x.view()).unwrap(), 0.0);
        assert_eq!(
            euclidean(array![1.0].view(), array![4.0].view()).unwrap(),
            3.0
        );
        assert!(euclidean(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(
            cosine_distance(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            cosine_distance(array![2.0, 0.0].view(), array![5.0, 0.0].view()).unwrap(),
            0.0
        );
        let err = cosine_distance(array![0.0, 0.0].view(), array![1.0, 0.0].view()).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm vector");
    }

    #[test]
    fn bleu_distance_examples() {
        assert_eq!(
            bleu_distance(&[3, 1, 4, 1, 5], &[3, 1, 4, 1, 5]).unwrap(),
            0.0
        );
        // Disjoint vocabularies: every precision is smoothed to 1e-9 / count,
        // so both BLEU directions are ~1e-9 and the distance is within 1e-8 of 1.
        let a: Vec<u32> = (0..40).collect();
        let b: Vec<u32> = (100..140).collect();
        let d = bleu_distance(&a, &b).unwrap();
        let oracle = 1.0 - crate::metrics::bleu(&a, &b, 4).unwrap();
        assert_abs_diff_eq!(d, oracle, epsilon = 1e-15);
        assert!((1.0 - d) < 1e-8);
        assert!(bleu_distance(&[], &[1]).is_err());
    }

    #[test]
    fn greedy_match_examples() {
        let eye = TokenEmbeddingTable::new(Array2::eye(3)).unwrap();
        let g = greedy_match_similarity(&[0, 2, 1, 1], &[0, 2, 1, 1], &eye).unwrap();
        assert_eq!((g.precision, g.recall, g.f), (1.0, 1.0, 1.0));

        let g = greedy_match_similarity(&[0], &[1], &eye).unwrap();
        assert_eq!((g.precision, g.recall, g.f), (0.0, 0.0, 0.0));

        // S = [[0], [1]]: row maxima {0, 1}, column maximum {1}.
        let g = greedy_match_similarity(&[1, 2], &[2], &eye).unwrap();
        assert_abs_diff_eq!(g.precision, 0.5);
        assert_abs_diff_eq!(g.recall, 1.0);
        assert_abs_diff_eq!(g.f, 2.0 / 3.0, epsilon = 1e-12);

        assert!(greedy_match_similarity(&[5], &[1], &eye).is_err());
    }

    #[test]
    fn greedy_match_self_is_one_for_random_tables() {
        let mut rng = Rng::new(3);
        let table = TokenEmbeddingTable::random(20, 8, &mut rng).unwrap();
        for _ in 0..50 {
            let len = 1 + rng.below(15);
            let s: Vec<u32> = (0..len).map(|_| rng.below(20) as u32).collect();
            let g = greedy_match_similarity(&s, &s, &table).unwrap();
            assert_abs_diff_eq!(g.f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bleu_distance_is_symmetric() {
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let a: Vec<u32> = (0..1 + rng.below(12))
                .map(|_| rng.below(6) as u32)
                .collect();
            let b: Vec<u32> = (0..1 + rng.below(12))
                .map(|_| rng.below(6) as u32)
                .collect();
            assert_eq!(
                bleu_distance(&a, &b).unwrap(),
                bleu_distance(&b, &a).unwrap()
            );
        }
    }

    #[test]
    fn euclidean_triangle_inequality() {
        let mut rng = Rng::new(17);
        for _ in 0..10_000 {
            let d = 1 + rng.below(6);
            let mut pt = || Array1::from_shape_simple_fn(d, || rng.normal() * 10.0);
            let (x, y, z) = (pt(), pt(), pt());
            let xz = euclidean(x.view(), z.view()).unwrap();
            let xy = euclidean(x.view(), y.view()).unwrap();
            let yz = euclidean(y.view(), z.view()).unwrap();
            assert!(xz <= xy + yz + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn cosine_distance_in_range(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            prop_assume!(a.dot(&a) > 1e-9 && b.dot(&b) > 1e-9);
            let d = cosine_distance(a.view(), b.view()).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
