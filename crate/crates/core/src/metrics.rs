//! Evaluation metrics: accuracy, F1, perplexity and sentence BLEU.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{TaskKind, Token};

/// Highest n-gram order supported by [`NgramProfile`].
pub const MAX_NGRAM: usize = 4;

/// Replacement numerator for a zero n-gram precision.
pub const BLEU_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Accuracy,
    F1,
    #[serde(alias = "perplexity")]
    Ppl,
    Bleu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Accuracy => "accuracy",
            MetricId::F1 => "f1",
            MetricId::Ppl => "ppl",
            MetricId::Bleu => "bleu",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricId::Ppl => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn task_kind(self) -> TaskKind {
        match self {
            MetricId::Accuracy | MetricId::F1 => TaskKind::Classification,
            MetricId::Ppl | MetricId::Bleu => TaskKind::SequenceGeneration,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(MetricId::Accuracy),
            "f1" => Ok(MetricId::F1),
            "ppl" | "perplexity" => Ok(MetricId::Ppl),
            "bleu" => Ok(MetricId::Bleu),
            other => Err(Error::config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: MetricId,
    pub value: f64,
    pub direction: Direction,
}

impl MetricValue {
    pub fn new(metric: MetricId, value: f64) -> Self {
        Self {
            metric,
            value,
            direction: metric.direction(),
        }
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `tp / (tp + (fp + fn) / 2)`.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::invalid("f1 undefined: all counts are zero"));
    }
    let tp = tp as f64;
    Ok(tp / (tp + 0.5 * (fp + fn_) as f64))
}

/// Binary F1 with `positive` as the positive class.
pub fn f1_binary(predictions: &[usize], labels: &[usize], positive: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid("length mismatch"));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_score(tp, fp, fn_)
}

/// `exp(-mean(log p))` over natural-log token likelihoods.
pub fn perplexity(token_loglikelihoods: &[f64]) -> Result<f64> {
    if token_loglikelihoods.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    if let Some(ll) = token_loglikelihoods
        .iter()
        .find(|&&ll| ll.is_nan() || ll > 0.0)
    {
        return Err(Error::invalid(format!(
            "log-likelihood {ll} is positive or NaN"
        )));
    }
    let mean = token_loglikelihoods.iter().sum::<f64>() / token_loglikelihoods.len() as f64;
    Ok((-mean).exp())
}

/// Clipped n-gram counts of one sequence, orders `1..=MAX_NGRAM`.
///
/// N-grams are packed into a `u128` key (32 bits per token), so every lookup
/// is a single hash probe. Building a profile once per sequence turns each
/// BLEU evaluation into count intersections only.
#[derive(Debug, Clone)]
pub struct NgramProfile {
    len: usize,
    orders: Vec<HashMap<u128, u32>>,
}

impl NgramProfile {
    pub fn new(tokens: &[Token]) -> Self {
        let orders = (1..=MAX_NGRAM)
            .map(|n| {
                let mut counts = HashMap::new();
                if tokens.len() >= n {
                    for w in tokens.windows(n) {
                        *counts.entry(pack(w)).or_insert(0) += 1;
                    }
                }
                counts
            })
            .collect();
        Self {
            len: tokens.len(),
            orders,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Matches of order `n` clipped by the reference counts.
    fn clipped_matches(&self, reference: &NgramProfile, n: usize) -> u64 {
        let refs = &reference.orders[n - 1];
        self.orders[n - 1]
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)) as u64)
            .sum()
    }
}

fn pack(gram: &[Token]) -> u128 {
    gram.iter().fold(0u128, |acc, &t| (acc << 32) | t as u128)
}

/// Sentence BLEU of `candidate` against `reference`.
///
/// Effective order `N = min(max_n, |candidate|, |reference|)` with uniform
/// weights `1/N`; a zero precision is replaced by `1e-9 / (candidate n-grams)`.
/// Brevity penalty is 1 when the candidate is longer than the reference and
/// `exp(1 - r/c)` otherwise.
pub fn bleu(candidate: &[Token], reference: &[Token], max_n: usize) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid(
            "bleu needs non-empty candidate and reference",
        ));
    }
    check_order(max_n)?;
    Ok(bleu_profiles(
        &NgramProfile::new(candidate),
        &NgramProfile::new(reference),
        max_n,
    ))
}

fn check_order(max_n: usize) -> Result<()> {
    if !(1..=MAX_NGRAM).contains(&max_n) {
        return Err(Error::invalid(format!("max_n must be in 1..={MAX_NGRAM}")));
    }
    Ok(())
}

/// BLEU on pre-built profiles. Both profiles must be non-empty and
/// `1 <= max_n <= MAX_NGRAM`.
pub fn bleu_profiles(candidate: &NgramProfile, reference: &NgramProfile, max_n: usize) -> f64 {
    debug_assert!(!candidate.is_empty() && !reference.is_empty());
    let c = candidate.len;
    let r = reference.len;
    let order = max_n.min(c).min(r);
    let mut log_sum = 0.0;
    for n in 1..=order {
        let total = (c - n + 1) as f64;
        let matched = candidate.clipped_matches(reference, n) as f64;
        let p = if matched > 0.0 {
            matched / total
        } else {
            BLEU_SMOOTHING / total
        };
        log_sum += p.ln() / order as f64;
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

/// Mean sentence BLEU over aligned candidate/reference pairs.
pub fn corpus_bleu(
    candidates: &[Vec<Token>],
    references: &[Vec<Token>],
    max_n: usize,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::invalid("length mismatch"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        // An empty generation scores zero rather than failing the corpus.
        total += if c.is_empty() {
            0.0
        } else {
            bleu(c, r, max_n)?
        };
    }
    Ok(total / candidates.len() as f64)
}
