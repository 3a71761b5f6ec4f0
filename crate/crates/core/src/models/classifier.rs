//! One-hidden-layer softmax classifier with inverted dropout.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{softmax_rows, Adam, ModelOracle};
use crate::acquisition::{ProbMatrix, ProbStack};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureView};
use crate::pool::{Pool, TaskKind};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            dropout_rate: 0.1,
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.hidden_width == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "hidden_width and batch_size must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Parameter gradients, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    /// Concatenation in the order of [`Classifier::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }
}

/// `input -> tanh -> dropout -> softmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    dropout_rate: f64,
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || (2.0 * rng.uniform() - 1.0) * a)
}

impl Classifier {
    pub fn new(
        input_dim: usize,
        hidden_width: usize,
        num_classes: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            w1: xavier(input_dim, hidden_width, rng),
            b1: Array1::zeros(hidden_width),
            w2: xavier(hidden_width, num_classes, rng),
            b2: Array1::zeros(num_classes),
            dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Final-layer weights, `hidden_width x num_classes`.
    pub fn output_weights(&self) -> &Array2<f64> {
        &self.w2
    }

    /// Penultimate activations (dropout off).
    pub fn hidden(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1) + &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x, None).1
    }

    /// One pass with a fresh dropout mask.
    pub fn probabilities_stochastic(&self, x: ArrayView2<'_, f64>, rng: &mut Rng) -> Array2<f64> {
        let mask = self.dropout_mask(x.nrows(), rng);
        self.forward(x, mask.as_ref()).1
    }

    /// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`. `None`
    /// when the rate is zero.
    pub fn dropout_mask(&self, rows: usize, rng: &mut Rng) -> Option<Array2<f64>> {
        if self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        Some(Array2::from_shape_simple_fn(
            (rows, self.hidden_width()),
            || {
                if rng.uniform() < keep {
                    scale
                } else {
                    0.0
                }
            },
        ))
    }

    fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        mask: Option<&Array2<f64>>,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut h = self.hidden(x);
        if let Some(m) = mask {
            h *= m;
        }
        let mut p = h.dot(&self.w2) + &self.b2;
        softmax_rows(&mut p);
        (h, p)
    }

    /// Mean cross-entropy over the rows of `x` and its gradients.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        mask: Option<&Array2<f64>>,
    ) -> Result<(f64, Gradients)> {
        let n = x.nrows();
        if n == 0 || labels.len() != n {
            return Err(Error::invalid("features and labels are not row-aligned"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::invalid(format!("label {bad} out of range")));
        }
        let h = self.hidden(x);
        let hd = match mask {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let logits = hd.dot(&self.w2) + &self.b2;
        let mut loss = 0.0;
        let mut dz = Array2::zeros(logits.raw_dim());
        for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            loss -= row[y] - lse;
            for (c, &z) in row.iter().enumerate() {
                dz[[i, c]] = (z - lse).exp() / n as f64;
            }
            dz[[i, y]] -= 1.0 / n as f64;
        }
        loss /= n as f64;

        let w2 = hd.t().dot(&dz);
        let b2 = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&self.w2.t());
        if let Some(m) = mask {
            dh *= m;
        }
        Zip::from(&mut dh)
            .and(&h)
            .for_each(|d, &hv| *d *= 1.0 - hv * hv);
        let w1 = x.t().dot(&dh);
        let b1 = dh.sum_axis(Axis(0));
        Ok((loss, Gradients { w1, b1, w2, b2 }))
    }

    /// All parameters, flattened `w1, b1, w2, b2` (row-major).
    pub fn parameters(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if values.len() != total {
            return Err(Error::invalid(format!(
                "expected {total} parameters, got {}",
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *p = it.next().unwrap();
        }
        Ok(())
    }

    fn max_abs_weight(&self) -> f64 {
        self.parameters().iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

fn apply_update(
    net: &mut Classifier,
    grads: &Gradients,
    cfg: &ClassifierConfig,
    adam: &mut Option<Adam>,
) {
    let g = grads.flatten();
    let mut params = net.parameters();
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= cfg.learning_rate * gi;
            }
        }
        Optimizer::Adam => {
            adam.get_or_insert_with(|| Adam::new(g.len()))
                .step(&mut params, &g, cfg.learning_rate)
        }
    }
    net.set_parameters(&params).expect("same parameter count");
}

/// Trains on the rows of `x`; also returns the mean mini-batch loss of each
/// epoch (measured before each update).
pub fn fit_matrix(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(Classifier, Vec<f64>)> {
    cfg.validate()?;
    if x.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("features and labels are not row-aligned"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut net = Classifier::new(
        x.ncols(),
        cfg.hidden_width,
        num_classes,
        cfg.dropout_rate,
        &mut rng,
    );
    let mut adam = None;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mask = net.dropout_mask(chunk.len(), &mut rng);
            let (loss, grads) = net.loss_and_gradients(xb.view(), &yb, mask.as_ref())?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {}, max |weight| {:.3e})",
                    cfg.learning_rate,
                    net.max_abs_weight()
                )));
            }
            total += loss;
            batches += 1;
            apply_update(&mut net, &grads, cfg, &mut adam);
        }
        history.push(total / batches as f64);
    }
    Ok((net, history))
}

/// Trains a classifier on a feature view with one label per row.
pub fn train_classifier(
    features: &FeatureView,
    labels: &[usize],
    num_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    Ok(fit_matrix(features.matrix().view(), labels, num_classes, cfg)?.0)
}

/// L2-normalised token-count vectors, `ids.len() x vocab_size`.
pub fn bag_of_tokens(pool: &Pool, ids: &[usize]) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((ids.len(), pool.vocab_size()));
    for (r, &id) in ids.iter().enumerate() {
        for &t in pool.tokens(id) {
            m[[r, t as usize]] += 1.0;
        }
        let mut row = m.row_mut(r);
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    m
}

/// [`Classifier`] over bag-of-tokens inputs of a classification pool.
#[derive(Debug, Clone)]
pub struct PoolClassifier {
    net: Classifier,
}

impl PoolClassifier {
    pub fn fit(pool: &Pool, labeled: &[usize], cfg: &ClassifierConfig) -> Result<Self> {
        let num_classes = pool
            .num_classes()
            .ok_or_else(|| Error::capability("classifier needs a classification pool"))?;
        let labels = pool.class_labels(labeled)?;
        let x = bag_of_tokens(pool, labeled);
        let (net, _) = fit_matrix(x.view(), &labels, num_classes, cfg)?;
        Ok(Self { net })
    }

    pub fn network(&self) -> &Classifier {
        &self.net
    }
}

impl ModelOracle for PoolClassifier {
    fn name(&self) -> &str {
        "classifier"
    }

    fn task_kind(&self) -> TaskKind {
        TaskKind::Classification
    }

    fn supports_stochastic(&self) -> bool {
        true
    }

    fn predict_proba(&self, pool: &Pool, ids: &[usize]) -> Result<ProbMatrix> {
        ProbMatrix::new(self.net.probabilities(bag_of_tokens(pool, ids).view()))
    }

    fn predict_proba_stochastic(
        &self,
        pool: &Pool,
        ids: &[usize],
        passes: usize,
        rng: &mut Rng,
    ) -> Result<ProbStack> {
        let x = bag_of_tokens(pool, ids);
        let stack = (0..passes)
            .map(|_| ProbMatrix::new(self.net.probabilities_stochastic(x.view(), rng)))
            .collect::<Result<Vec<_>>>()?;
        ProbStack::new(stack)
    }

    fn embed(&self, pool: &Pool, ids: &[usize]) -> Result<FeatureView> {
        FeatureView::new(
            self.net.hidden(bag_of_tokens(pool, ids).view()),
            FeatureKind::Embedding,
            ids.to_vec(),
        )
    }
}
