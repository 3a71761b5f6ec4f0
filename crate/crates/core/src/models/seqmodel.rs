//! Minimal conditional sequence model.
//!
//! The encoder averages source-token embeddings. Each decoding step feeds
//! `[encoding; embedding(previous token); embedding(position)]` through a
//! tanh layer and a softmax over the vocabulary plus an end token. The
//! output layer starts at zero, so an untrained model is uniform.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, Adam, Generation, ModelOracle};
use crate::acquisition::{argmax, ProbMatrix};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureView};
use crate::pool::{Pool, TaskKind, Token};
use crate::rng::Rng;

/// The end token is `vocab_size + EOS_OFFSET` in the output vocabulary.
pub const EOS_OFFSET: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqModelConfig {
    pub embedding_width: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sequences per update.
    pub batch_size: usize,
    /// Longest generated sequence; also the number of position embeddings.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        Self {
            embedding_width: 32,
            hidden_width: 64,
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 8,
            max_len: 32,
            seed: 0,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::config(
                "epochs, batch_size and max_len must be positive",
            ));
        }
        if self.embedding_width == 0 || self.hidden_width == 0 {
            return Err(Error::config(
                "embedding_width and hidden_width must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    emb: usize,
    hidden: usize,
    positions: usize,
}

impl Layout {
    /// Input embeddings: vocabulary plus a start row.
    fn tok(&self) -> (usize, usize, usize) {
        (0, self.vocab + 1, self.emb)
    }
    fn pos(&self) -> (usize, usize, usize) {
        let (o, r, c) = self.tok();
        (o + r * c, self.positions, self.emb)
    }
    fn w1(&self) -> (usize, usize, usize) {
        let (o, r, c) = self.pos();
        (o + r * c, 3 * self.emb, self.hidden)
    }
    fn b1(&self) -> (usize, usize, usize) {
        let (o, r, c) = self.w1();
        (o + r * c, 1, self.hidden)
    }
    fn w2(&self) -> (usize, usize, usize) {
        let (o, r, c) = self.b1();
        (o + r * c, self.hidden, self.outputs())
    }
    fn b2(&self) -> (usize, usize, usize) {
        let (o, r, c) = self.w2();
        (o + r * c, 1, self.outputs())
    }
    fn total(&self) -> usize {
        let (o, r, c) = self.b2();
        o + r * c
    }
    fn outputs(&self) -> usize {
        self.vocab + 1
    }
    fn start(&self) -> usize {
        self.vocab
    }
    fn eos(&self) -> usize {
        self.vocab + EOS_OFFSET
    }
}

fn block(params: &[f64], (o, r, c): (usize, usize, usize)) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &params[o..o + r * c]).expect("block shape")
}

/// Trained sequence model.
#[derive(Debug, Clone)]
pub struct SeqModel {
    layout: Layout,
    params: Vec<f64>,
    max_len: usize,
}

/// Activations of one decoding step, kept for backprop.
struct Step {
    input: Array1<f64>,
    hidden: Array1<f64>,
    probs: Vec<f64>,
}

impl SeqModel {
    fn untrained(vocab: usize, cfg: &SeqModelConfig, rng: &mut Rng) -> Self {
        let layout = Layout {
            vocab,
            emb: cfg.embedding_width,
            hidden: cfg.hidden_width,
            positions: cfg.max_len,
        };
        let mut params = vec![0.0; layout.total()];
        let w1_start = layout.w1().0;
        let w1_end = layout.b1().0;
        let w1_scale = (1.0 / (3 * layout.emb) as f64).sqrt();
        for p in &mut params[..w1_start] {
            *p = 0.1 * rng.normal();
        }
        for p in &mut params[w1_start..w1_end] {
            *p = w1_scale * rng.normal();
        }
        Self {
            layout,
            params,
            max_len: cfg.max_len,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    /// Output vocabulary size: input vocabulary plus the end token.
    pub fn output_vocab_size(&self) -> usize {
        self.layout.outputs()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn eos(&self) -> usize {
        self.layout.eos()
    }

    pub fn encode(&self, source: &[Token]) -> Array1<f64> {
        let tok = block(&self.params, self.layout.tok());
        let mut enc = Array1::zeros(self.layout.emb);
        for &t in source {
            enc += &tok.row(t as usize);
        }
        if !source.is_empty() {
            enc /= source.len() as f64;
        }
        enc
    }

    fn step(&self, enc: ArrayView1<'_, f64>, prev: usize, pos: usize) -> Step {
        let e = self.layout.emb;
        let tok = block(&self.params, self.layout.tok());
        let pe = block(&self.params, self.layout.pos());
        let mut input = Array1::zeros(3 * e);
        input.slice_mut(s![..e]).assign(&enc);
        input.slice_mut(s![e..2 * e]).assign(&tok.row(prev));
        input
            .slice_mut(s![2 * e..])
            .assign(&pe.row(pos.min(self.layout.positions - 1)));
        let w1 = block(&self.params, self.layout.w1());
        let b1 = block(&self.params, self.layout.b1());
        let mut hidden = input.dot(&w1) + b1.row(0);
        hidden.mapv_inplace(f64::tanh);
        let w2 = block(&self.params, self.layout.w2());
        let b2 = block(&self.params, self.layout.b2());
        let mut probs = (hidden.dot(&w2) + b2.row(0)).to_vec();
        softmax_in_place(&mut probs);
        Step {
            input,
            hidden,
            probs,
        }
    }

    /// Next-token distribution after `prefix`.
    pub fn next_distribution(&self, source: &[Token], prefix: &[Token]) -> Vec<f64> {
        let enc = self.encode(source);
        let prev = prefix.last().map_or(self.layout.start(), |&t| t as usize);
        self.step(enc.view(), prev, prefix.len()).probs
    }

    /// Teacher-forced log-likelihood of every reference token and the end token.
    pub fn score_reference(&self, source: &[Token], reference: &[Token]) -> Vec<f64> {
        let enc = self.encode(source);
        let mut prev = self.layout.start();
        let mut out = Vec::with_capacity(reference.len() + 1);
        for (pos, target) in reference
            .iter()
            .map(|&t| t as usize)
            .chain([self.layout.eos()])
            .enumerate()
        {
            let st = self.step(enc.view(), prev, pos);
            out.push(st.probs[target].ln());
            prev = target;
        }
        out
    }

    /// Greedy decoding; also returns the mean per-step distribution.
    pub fn decode(&self, source: &[Token]) -> (Generation, Vec<f64>) {
        let enc = self.encode(source);
        let mut prev = self.layout.start();
        let mut tokens = Vec::new();
        let mut lls = Vec::new();
        let mut mean = vec![0.0; self.layout.outputs()];
        let mut steps = 0usize;
        while tokens.len() < self.max_len {
            let st = self.step(enc.view(), prev, tokens.len());
            let next = argmax(ArrayView1::from(&st.probs));
            lls.push(st.probs[next].ln());
            for (m, p) in mean.iter_mut().zip(&st.probs) {
                *m += p;
            }
            steps += 1;
            if next == self.layout.eos() {
                break;
            }
            tokens.push(next as Token);
            prev = next;
        }
        for m in &mut mean {
            *m /= steps as f64;
        }
        (
            Generation {
                tokens,
                loglikelihoods: lls,
            },
            mean,
        )
    }

    /// Adds the gradient of the summed cross-entropy of one pair, scaled by
    /// `scale`, into `grad`; returns the summed loss.
    fn accumulate(
        &self,
        source: &[Token],
        reference: &[Token],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let l = self.layout;
        let e = l.emb;
        let enc = self.encode(source);
        let w1 = block(&self.params, l.w1());
        let w2 = block(&self.params, l.w2());
        let mut d_enc = Array1::<f64>::zeros(e);
        let mut loss = 0.0;
        let mut prev = l.start();
        for (pos, target) in reference
            .iter()
            .map(|&t| t as usize)
            .chain([l.eos()])
            .enumerate()
        {
            let Step {
                input,
                hidden,
                probs,
            } = self.step(enc.view(), prev, pos);
            loss -= probs[target].ln();
            let mut dlogits = Array1::from(probs);
            dlogits[target] -= 1.0;
            dlogits *= scale;

            let (o, _, c) = l.w2();
            for (j, &hj) in hidden.iter().enumerate() {
                let row = &mut grad[o + j * c..o + (j + 1) * c];
                for (g, &d) in row.iter_mut().zip(dlogits.iter()) {
                    *g += hj * d;
                }
            }
            let (o, _, _) = l.b2();
            for (g, &d) in grad[o..o + c].iter_mut().zip(dlogits.iter()) {
                *g += d;
            }
            let dh = w2.dot(&dlogits);
            let da = &dh * &hidden.mapv(|h| 1.0 - h * h);
            let (o, _, hc) = l.w1();
            for (i, &zi) in input.iter().enumerate() {
                if zi == 0.0 {
                    continue;
                }
                let row = &mut grad[o + i * hc..o + (i + 1) * hc];
                for (g, &d) in row.iter_mut().zip(da.iter()) {
                    *g += zi * d;
                }
            }
            let (o, _, _) = l.b1();
            for (g, &d) in grad[o..o + hc].iter_mut().zip(da.iter()) {
                *g += d;
            }
            let dz = w1.dot(&da);
            d_enc += &dz.slice(s![..e]);
            let (o, _, _) = l.tok();
            for (g, &d) in grad[o + prev * e..o + (prev + 1) * e]
                .iter_mut()
                .zip(dz.slice(s![e..2 * e]))
            {
                *g += d;
            }
            let p = pos.min(l.positions - 1);
            let (o, _, _) = l.pos();
            for (g, &d) in grad[o + p * e..o + (p + 1) * e]
                .iter_mut()
                .zip(dz.slice(s![2 * e..]))
            {
                *g += d;
            }
            prev = target;
        }
        if !source.is_empty() {
            let share = 1.0 / source.len() as f64;
            let (o, _, _) = l.tok();
            for &t in source {
                let t = t as usize;
                for (g, &d) in grad[o + t * e..o + (t + 1) * e]
                    .iter_mut()
                    .zip(d_enc.iter())
                {
                    *g += d * share;
                }
            }
        }
        loss
    }

    /// Mean per-token cross-entropy over `pairs` and its gradient.
    pub fn loss_and_gradient(&self, pairs: &[(&[Token], &[Token])]) -> (f64, Vec<f64>) {
        let total: usize = pairs.iter().map(|(_, r)| r.len() + 1).sum();
        let scale = 1.0 / total as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (src, reference) in pairs {
            loss += self.accumulate(src, reference, scale, &mut grad);
        }
        (loss * scale, grad)
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }
}

/// Trains a sequence model on the labeled items of a sequence pool.
pub fn train_seqmodel(pool: &Pool, labeled: &[usize], cfg: &SeqModelConfig) -> Result<SeqModel> {
    cfg.validate()?;
    if pool.task_kind() != TaskKind::SequenceGeneration {
        return Err(Error::capability(
            "sequence model needs a sequence-generation pool",
        ));
    }
    let pairs: Vec<(&[Token], &[Token])> = labeled
        .iter()
        .map(|&i| {
            let r = pool.reference(i).unwrap_or_default();
            (pool.tokens(i), r)
        })
        .collect();
    if pairs.is_empty() || pairs.iter().any(|(_, r)| r.is_empty()) {
        return Err(Error::invalid("empty references"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut model = SeqModel::untrained(pool.vocab_size(), cfg, &mut rng);
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| pairs[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&batch);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite sequence loss at epoch {epoch}"
                )));
            }
            adam.step(&mut model.params, &grad, cfg.learning_rate);
        }
    }
    Ok(model)
}

impl ModelOracle for SeqModel {
    fn name(&self) -> &str {
        "seq2seq"
    }

    fn task_kind(&self) -> TaskKind {
        TaskKind::SequenceGeneration
    }

    fn predict_proba(&self, _pool: &Pool, _ids: &[usize]) -> Result<ProbMatrix> {
        Err(Error::capability(
            "sequence model has no class probabilities",
        ))
    }

    fn embed(&self, pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        let mut m = Array2::zeros((ids.len(), self.layout.emb));
        for (r, &id) in ids.iter().enumerate() {
            m.row_mut(r).assign(&self.encode(pool.tokens(id)));
        }
        FeatureView::new(m, FeatureKind::Embedding, ids.to_vec())
    }

    fn output_features(&self, pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        let rows: Vec<Vec<f64>> = ids
            .par_iter()
            .map(|&id| self.decode(pool.tokens(id)).1)
            .collect();
        let mut m = Array2::zeros((ids.len(), self.output_vocab_size()));
        for (r, row) in rows.into_iter().enumerate() {
            m.row_mut(r).assign(&Array1::from(row));
        }
        FeatureView::new(m, FeatureKind::Output, ids.to_vec())
    }

    fn generate(&self, pool: &Pool, ids: &[usize]) -> Result<Vec<Generation>> {
        Ok(ids
            .par_iter()
            .map(|&id| self.decode(pool.tokens(id)).0)
            .collect())
    }

    fn reference_loglikelihoods(&self, pool: &Pool, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        ids.par_iter()
            .map(|&id| {
                let r = pool
                    .reference(id)
                    .ok_or_else(|| Error::capability("pool has no reference sequences"))?;
                Ok(self.score_reference(pool.tokens(id), r))
            })
            .collect()
    }
}
