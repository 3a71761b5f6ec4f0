use std::collections::HashMap;

use ndarray::Array2;

use super::{
    bleu_distance_profiles, cosine_distance, euclidean, greedy_match_normalized, Metric,
    TokenEmbeddingTable,
};
use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::metrics::NgramProfile;
use crate::pool::{Pool, Token};

/// A distance between pool items, addressed by pool index.
pub trait DistanceSpace: Sync {
    fn distance(&self, a: usize, b: usize) -> Result<f64>;

    /// Preference for the first pick when nothing is labeled yet; larger wins.
    fn seed_priority(&self, _id: usize) -> f64 {
        0.0
    }

    fn metric(&self) -> Metric;
}

/// Euclidean or cosine distance between rows of a feature view.
pub struct VectorSpace<'a> {
    view: &'a FeatureView,
    metric: Metric,
}

impl<'a> VectorSpace<'a> {
    pub fn new(view: &'a FeatureView, metric: Metric) -> Result<Self> {
        if !metric.is_vector() {
            return Err(Error::invalid(format!("{metric} is not a vector metric")));
        }
        Ok(Self { view, metric })
    }

    pub fn euclidean(view: &'a FeatureView) -> Self {
        Self {
            view,
            metric: Metric::Euclidean,
        }
    }
}

impl DistanceSpace for VectorSpace<'_> {
    fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let missing = |id| Error::invalid(format!("item {id} is not in the feature view"));
        let ra = self.view.row(a).ok_or_else(|| missing(a))?;
        let rb = self.view.row(b).ok_or_else(|| missing(b))?;
        match self.metric {
            Metric::Cosine => cosine_distance(ra, rb),
            _ => euclidean(ra, rb),
        }
    }

    fn seed_priority(&self, id: usize) -> f64 {
        self.view.row(id).map(|r| r.dot(&r).sqrt()).unwrap_or(0.0)
    }

    fn metric(&self) -> Metric {
        self.metric
    }
}

/// BLEU or greedy-match distance between token sequences. N-gram tables and
/// unit token embeddings are built once up front.
pub struct SequenceSpace {
    metric: Metric,
    slots: HashMap<usize, usize>,
    tokens: Vec<Vec<Token>>,
    profiles: Vec<NgramProfile>,
    unit_table: Option<Array2<f64>>,
}

impl SequenceSpace {
    pub fn new(
        pool: &Pool,
        ids: &[usize],
        metric: Metric,
        table: Option<&TokenEmbeddingTable>,
    ) -> Result<Self> {
        let seqs: Vec<Vec<Token>> = ids.iter().map(|&i| pool.tokens(i).to_vec()).collect();
        Self::from_sequences(ids, seqs, metric, table)
    }

    pub fn from_sequences(
        ids: &[usize],
        tokens: Vec<Vec<Token>>,
        metric: Metric,
        table: Option<&TokenEmbeddingTable>,
    ) -> Result<Self> {
        if metric.is_vector() {
            return Err(Error::invalid(format!("{metric} is not a sequence metric")));
        }
        if ids.len() != tokens.len() {
            return Err(Error::invalid("ids and sequences differ in length"));
        }
        if tokens.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("empty sequence"));
        }
        let unit_table = match metric {
            Metric::GreedyMatch => {
                let table = table
                    .ok_or_else(|| Error::invalid("greedy_match needs a token embedding table"))?;
                for s in &tokens {
                    table.check_tokens(s)?;
                }
                Some(table.normalized())
            }
            _ => None,
        };
        let profiles = match metric {
            Metric::Bleu => tokens.iter().map(|s| NgramProfile::new(s)).collect(),
            _ => Vec::new(),
        };
        let slots = ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        Ok(Self {
            metric,
            slots,
            tokens,
            profiles,
            unit_table,
        })
    }

    fn slot(&self, id: usize) -> Result<usize> {
        self.slots
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("item {id} is not in the sequence space")))
    }

    pub(crate) fn slot_distance(&self, a: usize, b: usize) -> f64 {
        match self.metric {
            Metric::Bleu => bleu_distance_profiles(&self.profiles[a], &self.profiles[b]),
            _ => {
                let unit = self.unit_table.as_ref().expect("greedy-match table");
                greedy_match_normalized(&self.tokens[a], &self.tokens[b], unit).distance()
            }
        }
    }
}

impl DistanceSpace for SequenceSpace {
    fn distance(&self, a: usize, b: usize) -> Result<f64> {
        Ok(self.slot_distance(self.slot(a)?, self.slot(b)?))
    }

    fn metric(&self) -> Metric {
        self.metric
    }
}
