//! Acquisition functions and the dispatch used by the active-learning loop.
//!
//! Ranking rules share one convention: lower score = selected first, ties to
//! the smaller pool index.

mod clustering;
mod uncertainty;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distance::{DistanceSpace, Metric, SequenceSpace, TokenEmbeddingTable, VectorSpace};
use crate::error::{Error, Result};
use crate::features::{make_feature_view, FeatureKind, FeatureView, Padding};
use crate::models::ModelOracle;
use crate::pool::{Pool, TaskKind};
use crate::rng::Rng;

pub use clustering::{
    gradient_embeddings, kmeans, kmeans_pp_seeds, select_badge, select_coreset, select_kcenter,
    select_kmeans, select_random, ClusterResult, KMeansParams,
};
pub use uncertainty::{
    argmax, kl_divergence, nearest_rows, score_bald, score_cal, score_uncertainty,
    EntropyDirection, ProbMatrix, ProbStack, UncertaintyMethod, PROB_FLOOR,
};

/// Selected pool indices in selection order, with the score each one had.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub method: String,
    pub seed: u64,
    /// Largest remaining min-distance after a k-center/Coreset selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_radius: Option<f64>,
}

impl Selection {
    pub fn new(
        indices: Vec<usize>,
        scores: Vec<f64>,
        method: impl Into<String>,
        seed: u64,
    ) -> Self {
        Self {
            indices,
            scores,
            method: method.into(),
            seed,
            coverage_radius: None,
        }
    }
}

/// Sorted, de-duplicated candidates; errors when empty or duplicated.
pub(crate) fn canonical_candidates(candidates: &[usize]) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let mut c = candidates.to_vec();
    c.sort_unstable();
    let before = c.len();
    c.dedup();
    if c.len() != before {
        return Err(Error::invalid("duplicate candidate index"));
    }
    Ok(c)
}

pub(crate) fn clamp_budget(budget: usize, available: usize) -> Result<usize> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if budget > available {
        log::warn!("budget {budget} exceeds {available} candidates; selecting all of them");
    }
    Ok(budget.min(available))
}

/// The `budget` candidates with the smallest scores (`scores[i]` belongs to
/// `candidates[i]`), ties broken by smaller pool index.
pub fn select_top(
    scores: &[f64],
    candidates: &[usize],
    budget: usize,
    method: &str,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    if scores.len() != candidates.len() {
        return Err(Error::invalid("scores and candidates differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN acquisition score"));
    }
    canonical_candidates(candidates)?;
    let budget = clamp_budget(budget, candidates.len())?;
    let mut order: Vec<(f64, usize)> = scores
        .iter()
        .copied()
        .zip(candidates.iter().copied())
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(budget);
    let (scores, indices) = order.into_iter().unzip();
    Ok(Selection::new(indices, scores, method, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Random,
    LeastConfidence,
    Margin,
    Entropy,
    Gini,
    Bald,
    Cal,
    KMeans,
    KCenter,
    Badge,
    Coreset,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Random,
        Method::LeastConfidence,
        Method::Margin,
        Method::Entropy,
        Method::Gini,
        Method::Bald,
        Method::Cal,
        Method::KMeans,
        Method::KCenter,
        Method::Badge,
        Method::Coreset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::LeastConfidence => "lc",
            Method::Margin => "margin",
            Method::Entropy => "entropy",
            Method::Gini => "gini",
            Method::Bald => "bald",
            Method::Cal => "cal",
            Method::KMeans => "kmeans",
            Method::KCenter => "kcenter",
            Method::Badge => "badge",
            Method::Coreset => "coreset",
        }
    }

    pub fn supports(self, task: TaskKind) -> bool {
        match self {
            Method::LeastConfidence
            | Method::Margin
            | Method::Entropy
            | Method::Gini
            | Method::Bald
            | Method::Cal => task == TaskKind::Classification,
            _ => true,
        }
    }

    /// Feature binding used when none is configured.
    ///
    /// K-Means uses output vectors for classification and tokens otherwise;
    /// K-Center uses embeddings for classification and output vectors
    /// otherwise; BADGE and Coreset always use output vectors; CAL searches
    /// neighbours in embedding space.
    pub fn default_feature(self, task: TaskKind) -> Option<FeatureKind> {
        let classification = task == TaskKind::Classification;
        match self {
            Method::KMeans if classification => Some(FeatureKind::Output),
            Method::KMeans => Some(FeatureKind::Token),
            Method::KCenter if classification => Some(FeatureKind::Embedding),
            Method::KCenter => Some(FeatureKind::Output),
            Method::Badge | Method::Coreset => Some(FeatureKind::Output),
            Method::Cal => Some(FeatureKind::Embedding),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.to_ascii_lowercase().as_str() {
            "random" => Method::Random,
            "lc" | "least_confidence" | "least-confidence" => Method::LeastConfidence,
            "margin" => Method::Margin,
            "entropy" => Method::Entropy,
            "gini" | "deepgini" => Method::Gini,
            "bald" => Method::Bald,
            "cal" => Method::Cal,
            "kmeans" | "k-means" | "km" | "km-c" => Method::KMeans,
            "kcenter" | "k-center" | "kc" | "kc-c" => Method::KCenter,
            "badge" | "badge-c" => Method::Badge,
            "coreset" | "coreset-c" => Method::Coreset,
            other => {
                return Err(Error::config(format!(
                    "unknown acquisition method '{other}'"
                )))
            }
        };
        Ok(m)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub method: Method,
    /// Feature view; `None` uses [`Method::default_feature`].
    pub feature: Option<FeatureKind>,
    /// Distance for K-Center and Coreset.
    pub distance: Metric,
    /// Coreset only: metric for the initial candidate-to-labeled distances.
    /// Defaults to `distance`.
    pub initial_distance: Option<Metric>,
    pub entropy: EntropyDirection,
    pub cal_neighbors: usize,
    pub bald_passes: usize,
    pub outlier_bound: Option<f64>,
    pub padding: Padding,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    /// Width and seed of the random token table used by greedy matching.
    pub table_width: usize,
    pub table_seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            method: Method::Random,
            feature: None,
            distance: Metric::Euclidean,
            initial_distance: None,
            entropy: EntropyDirection::Max,
            cal_neighbors: 10,
            bald_passes: 20,
            outlier_bound: None,
            padding: Padding::default(),
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            table_width: 32,
            table_seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn with_feature(mut self, feature: FeatureKind) -> Self {
        self.feature = Some(feature);
        self
    }

    pub fn with_distance(mut self, distance: Metric) -> Self {
        self.distance = distance;
        self
    }

    pub fn feature_for(&self, task: TaskKind) -> Option<FeatureKind> {
        self.feature.or_else(|| self.method.default_feature(task))
    }

    /// Short identifier such as `margin` or `coreset[output,euclidean]`.
    pub fn label(&self, task: TaskKind) -> String {
        let mut parts = Vec::new();
        if let Some(f) = self.feature_for(task) {
            if matches!(self.method, Method::KCenter | Method::Coreset)
                && !self.distance.is_vector()
            {
                parts.push(self.distance.to_string());
            } else {
                parts.push(f.to_string());
                if matches!(self.method, Method::KCenter | Method::Coreset) {
                    parts.push(self.distance.to_string());
                }
            }
        }
        if parts.is_empty() {
            self.method.to_string()
        } else {
            format!("{}[{}]", self.method, parts.join(","))
        }
    }

    pub fn check_task(&self, task: TaskKind) -> Result<()> {
        if !self.method.supports(task) {
            return Err(Error::capability(format!(
                "acquisition '{}' does not support {:?} tasks",
                self.method, task
            )));
        }
        Ok(())
    }
}

/// Everything an acquisition function may look at in one round.
pub struct AcquisitionContext<'a> {
    pub pool: &'a Pool,
    pub model: Option<&'a dyn ModelOracle>,
    pub labeled: &'a [usize],
    pub candidates: &'a [usize],
    pub budget: usize,
}

impl AcquisitionContext<'_> {
    fn model(&self) -> Result<&dyn ModelOracle> {
        self.model
            .ok_or_else(|| Error::capability("this acquisition function needs a trained model"))
    }

    fn view(
        &self,
        cfg: &AcquisitionConfig,
        kind: FeatureKind,
        ids: &[usize],
    ) -> Result<FeatureView> {
        make_feature_view(self.pool, ids, kind, self.model, cfg.padding)
    }
}

fn space_for<'v>(
    cfg: &AcquisitionConfig,
    ctx: &AcquisitionContext<'_>,
    metric: Metric,
    view: Option<&'v FeatureView>,
    ids: &[usize],
) -> Result<Box<dyn DistanceSpace + 'v>> {
    if metric.is_vector() {
        let view = view.expect("vector metric needs a feature view");
        Ok(Box::new(VectorSpace::new(view, metric)?))
    } else {
        let table = match metric {
            Metric::GreedyMatch => Some(TokenEmbeddingTable::random(
                ctx.pool.vocab_size(),
                cfg.table_width,
                &mut Rng::new(cfg.table_seed),
            )?),
            _ => None,
        };
        Ok(Box::new(SequenceSpace::new(
            ctx.pool,
            ids,
            metric,
            table.as_ref(),
        )?))
    }
}

/// Runs the configured acquisition function for one round.
pub fn acquire(
    cfg: &AcquisitionConfig,
    ctx: &AcquisitionContext<'_>,
    rng: &mut Rng,
) -> Result<Selection> {
    let task = ctx.pool.task_kind();
    cfg.check_task(task)?;
    let cands = canonical_candidates(ctx.candidates)?;
    let seed = rng.seed();
    let feature = cfg.feature_for(task);

    let mut sel = match cfg.method {
        Method::Random => select_random(&cands, ctx.budget, rng)?,
        Method::LeastConfidence | Method::Margin | Method::Entropy | Method::Gini => {
            let probs = ctx.model()?.predict_proba(ctx.pool, &cands)?;
            let method = match cfg.method {
                Method::LeastConfidence => UncertaintyMethod::LeastConfidence,
                Method::Margin => UncertaintyMethod::Margin,
                Method::Gini => UncertaintyMethod::Gini,
                _ => UncertaintyMethod::Entropy(cfg.entropy),
            };
            let scores = score_uncertainty(&probs, method)?;
            select_top(&scores, &cands, ctx.budget, cfg.method.as_str())?
        }
        Method::Bald => {
            let model = ctx.model()?;
            if !model.supports_stochastic() {
                return Err(Error::capability("stochastic passes unsupported"));
            }
            let stack = model.predict_proba_stochastic(ctx.pool, &cands, cfg.bald_passes, rng)?;
            select_top(&score_bald(&stack)?, &cands, ctx.budget, "bald")?
        }
        Method::Cal => {
            let model = ctx.model()?;
            let kind = feature.unwrap_or(FeatureKind::Embedding);
            let mut labeled = ctx.labeled.to_vec();
            labeled.sort_unstable();
            let cand_probs = model.predict_proba(ctx.pool, &cands)?;
            let lab_probs = model.predict_proba(ctx.pool, &labeled)?;
            let cand_feats = ctx.view(cfg, kind, &cands)?;
            let lab_feats = ctx.view(cfg, kind, &labeled)?;
            let scores = score_cal(
                &cand_probs,
                cand_feats.matrix().view(),
                &lab_probs,
                lab_feats.matrix().view(),
                cfg.cal_neighbors,
            )?;
            select_top(&scores, &cands, ctx.budget, "cal")?
        }
        Method::KMeans => {
            let kind = feature.unwrap_or(FeatureKind::Output);
            let view = ctx.view(cfg, kind, &cands)?;
            select_kmeans(
                view.matrix().view(),
                &cands,
                ctx.budget,
                rng,
                cfg.kmeans_max_iters,
                cfg.kmeans_tol,
            )?
        }
        Method::KCenter | Method::Coreset => {
            let mut all: Vec<usize> = ctx.labeled.iter().chain(&cands).copied().collect();
            all.sort_unstable();
            all.dedup();
            let initial_metric = match cfg.method {
                Method::Coreset => cfg.initial_distance.unwrap_or(cfg.distance),
                _ => cfg.distance,
            };
            let view = if cfg.distance.is_vector() || initial_metric.is_vector() {
                Some(ctx.view(cfg, feature.unwrap_or(FeatureKind::Output), &all)?)
            } else {
                None
            };
            let update = space_for(cfg, ctx, cfg.distance, view.as_ref(), &all)?;
            if cfg.method == Method::KCenter {
                select_kcenter(update.as_ref(), ctx.labeled, &cands, ctx.budget)?
            } else if initial_metric == cfg.distance {
                select_coreset(
                    update.as_ref(),
                    update.as_ref(),
                    ctx.labeled,
                    &cands,
                    ctx.budget,
                    cfg.outlier_bound,
                )?
            } else {
                let initial = space_for(cfg, ctx, initial_metric, view.as_ref(), &all)?;
                select_coreset(
                    initial.as_ref(),
                    update.as_ref(),
                    ctx.labeled,
                    &cands,
                    ctx.budget,
                    cfg.outlier_bound,
                )?
            }
        }
        Method::Badge => {
            let model = ctx.model()?;
            let probs = model.predict_proba(ctx.pool, &cands)?;
            let penult = ctx.view(cfg, feature.unwrap_or(FeatureKind::Output), &cands)?;
            select_badge(&probs, penult.matrix().view(), &cands, ctx.budget, rng)?
        }
    };
    sel.method = cfg.label(task);
    sel.seed = seed;
    Ok(sel)
}
