//! Synthetic pools for tests, demos and benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Label, Pool, PoolItem, Split, TaskKind, Token};
use crate::rng::Rng;

/// A classification pool whose classes are mixtures of token "topics".
///
/// Each class owns `modes_per_class` topics of `topic_tokens` tokens drawn
/// from the whole vocabulary (topics of different classes may overlap). A
/// token is taken from the item's topic with probability `signal` and is
/// uniform noise otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteredClassification {
    pub num_classes: usize,
    pub train: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub modes_per_class: usize,
    pub topic_tokens: usize,
    pub signal: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ClusteredClassification {
    fn default() -> Self {
        Self {
            num_classes: 10,
            train: 3000,
            test: 1000,
            vocab_size: 1000,
            modes_per_class: 2,
            topic_tokens: 30,
            signal: 0.25,
            min_len: 8,
            max_len: 24,
            seed: 0,
        }
    }
}

fn check_lengths(min_len: usize, max_len: usize, vocab: usize) -> Result<()> {
    if min_len == 0 || max_len < min_len {
        return Err(Error::config("need 1 <= min_len <= max_len"));
    }
    if vocab < 2 {
        return Err(Error::config("vocab_size must be at least 2"));
    }
    Ok(())
}

pub fn clustered_classification(p: &ClusteredClassification) -> Result<Pool> {
    check_lengths(p.min_len, p.max_len, p.vocab_size)?;
    if p.num_classes < 2
        || p.modes_per_class == 0
        || p.topic_tokens == 0
        || p.topic_tokens > p.vocab_size
    {
        return Err(Error::config("invalid class/topic layout"));
    }
    if !(0.0..=1.0).contains(&p.signal) {
        return Err(Error::config("signal must lie in [0, 1]"));
    }
    let mut rng = Rng::new(p.seed);
    let vocab: Vec<Token> = (0..p.vocab_size as Token).collect();
    let topics: Vec<Vec<Vec<Token>>> = (0..p.num_classes)
        .map(|_| {
            (0..p.modes_per_class)
                .map(|_| rng.sample(&vocab, p.topic_tokens))
                .collect()
        })
        .collect();
    let items = (0..p.train + p.test)
        .map(|i| {
            let class = rng.below(p.num_classes);
            let topic = &topics[class][rng.below(p.modes_per_class)];
            let len = p.min_len + rng.below(p.max_len - p.min_len + 1);
            let tokens = (0..len)
                .map(|_| {
                    if rng.uniform() < p.signal {
                        topic[rng.below(topic.len())]
                    } else {
                        rng.below(p.vocab_size) as Token
                    }
                })
                .collect();
            PoolItem {
                id: i,
                tokens,
                label: Label::Class(class),
                split: if i < p.train {
                    Split::Train
                } else {
                    Split::Test
                },
            }
        })
        .collect();
    Pool::new(
        TaskKind::Classification,
        p.vocab_size,
        Some(p.num_classes),
        items,
    )
}

/// A sequence-generation pool. Sources are noisy copies of a few templates;
/// the reference is a fixed token permutation of the source prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequencePool {
    /// Train items.
    pub items: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub templates: usize,
    pub noise: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub reference_len: usize,
    pub seed: u64,
}

impl Default for SequencePool {
    fn default() -> Self {
        Self {
            items: 500,
            test: 100,
            vocab_size: 50,
            templates: 8,
            noise: 0.3,
            min_len: 4,
            max_len: 12,
            reference_len: 4,
            seed: 0,
        }
    }
}

pub fn sequence_pool(p: &SequencePool) -> Result<Pool> {
    check_lengths(p.min_len, p.max_len, p.vocab_size)?;
    if p.templates == 0 || p.reference_len == 0 {
        return Err(Error::config(
            "templates and reference_len must be positive",
        ));
    }
    let mut rng = Rng::new(p.seed);
    let mut perm: Vec<Token> = (0..p.vocab_size as Token).collect();
    rng.shuffle(&mut perm);
    let templates: Vec<Vec<Token>> = (0..p.templates)
        .map(|_| {
            (0..p.max_len)
                .map(|_| rng.below(p.vocab_size) as Token)
                .collect()
        })
        .collect();
    let items = (0..p.items + p.test)
        .map(|i| {
            let t = &templates[rng.below(p.templates)];
            let len = p.min_len + rng.below(p.max_len - p.min_len + 1);
            let tokens: Vec<Token> = t[..len]
                .iter()
                .map(|&tok| {
                    if rng.uniform() < p.noise {
                        rng.below(p.vocab_size) as Token
                    } else {
                        tok
                    }
                })
                .collect();
            let reference = tokens
                .iter()
                .take(p.reference_len)
                .map(|&tok| perm[tok as usize])
                .collect();
            PoolItem {
                id: i,
                tokens,
                label: Label::Sequence(reference),
                split: if i < p.items {
                    Split::Train
                } else {
                    Split::Test
                },
            }
        })
        .collect();
    Pool::new(TaskKind::SequenceGeneration, p.vocab_size, None, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let p = ClusteredClassification {
            train: 100,
            test: 40,
            ..Default::default()
        };
        let a = clustered_classification(&p).unwrap();
        assert_eq!(a.train_indices().len(), 100);
        assert_eq!(a.test_indices().len(), 40);
        assert_eq!(a.items(), clustered_classification(&p).unwrap().items());

        let s = sequence_pool(&SequencePool::default()).unwrap();
        assert_eq!(s.len(), 600);
        assert!(s.items().iter().all(|it| it.tokens.len() >= 4));
    }
}
