//! Selection diversity, rank correlation and the diversity-versus-performance
//! study.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{round_budget, RunConfig};
use crate::distance::{DistanceSpace, Metric, SequenceSpace, TokenEmbeddingTable, VectorSpace};
use crate::error::{Error, Result};
use crate::features::{make_feature_view, FeatureKind, Padding};
use crate::metrics::{Direction, MetricId};
use crate::models::ModelSpec;
use crate::pool::Pool;
use crate::rng::Rng;
use crate::simulator::evaluate;

/// Largest sample size for [`spearman_exact_p`].
pub const EXACT_P_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided, from the t approximation.
    pub p_value: f64,
    pub n: usize,
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid("spearman needs at least 3 observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    Ok(())
}

fn rank_rho(rx: &[f64], ry: &[f64]) -> Result<f64> {
    pearson(rx, ry).ok_or_else(|| Error::invalid("constant vector: rank correlation is undefined"))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    check_pair(x, y)?;
    let rho = rank_rho(&average_ranks(x), &average_ranks(y))?;
    let n = x.len();
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Spearman { rho, p_value, n })
}

/// Exact two-sided permutation p-value of Spearman's rho, for
/// `n <= EXACT_P_MAX_N`.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    if n > EXACT_P_MAX_N {
        return Err(Error::invalid(format!(
            "exact p-value limited to n <= {EXACT_P_MAX_N}"
        )));
    }
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let observed = rank_rho(&rx, &ry)?.abs();
    // Heap's algorithm over all n! orderings of the y ranks.
    let mut c = vec![0usize; n];
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |ry: &[f64]| {
        total += 1;
        if pearson(&rx, ry).is_some_and(|r| r.abs() >= observed - 1e-12) {
            hits += 1;
        }
    };
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Mean distance over all unordered pairs of `selected`.
pub fn diversity(selected: &[usize], space: &dyn DistanceSpace) -> Result<f64> {
    if selected.len() < 2 {
        return Err(Error::invalid("diversity needs at least 2 items"));
    }
    let rows: Vec<f64> = (0..selected.len())
        .into_par_iter()
        .map(|i| {
            selected[i + 1..]
                .iter()
                .map(|&b| space.distance(selected[i], b))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    let pairs = selected.len() * (selected.len() - 1) / 2;
    Ok(rows.iter().sum::<f64>() / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub a: String,
    pub b: String,
    pub rho: f64,
    pub p_value: f64,
    pub n_samples: usize,
}

/// Spearman's rho for every unordered pair of named vectors, in input order.
pub fn distance_method_correlation(vectors: &[(String, Vec<f64>)]) -> Result<Vec<PairCorrelation>> {
    let mut out = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let s = spearman(&vectors[i].1, &vectors[j].1)?;
            out.push(PairCorrelation {
                a: vectors[i].0.clone(),
                b: vectors[j].0.clone(),
                rho: s.rho,
                p_value: s.p_value,
                n_samples: s.n,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Base set of `init_size` random items.
    Early,
    /// Base set of `late_fraction` of the train split.
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub stage: Stage,
    pub repeats: usize,
    pub distance_methods: Vec<Metric>,
    /// Feature view for the vector distances.
    pub feature: FeatureKind,
    pub late_fraction: f64,
    pub padding: Padding,
    pub table_width: usize,
    pub table_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Early,
            repeats: 100,
            distance_methods: Metric::ALL.to_vec(),
            feature: FeatureKind::Output,
            late_fraction: 0.05,
            padding: Padding::default(),
            table_width: 32,
            table_seed: 0,
        }
    }
}

/// Performance of a model trained on `base` plus `selection`; higher is
/// better.
pub trait PerformanceOracle: Sync {
    fn performance(
        &self,
        pool: &Pool,
        base: &[usize],
        selection: &[usize],
        rng: &mut Rng,
    ) -> Result<f64>;

    /// Name recorded in the report.
    fn label(&self) -> String {
        "custom".into()
    }

    /// Whether the underlying metric was negated to make higher better.
    fn sign_flipped(&self) -> bool {
        false
    }
}

impl<F> PerformanceOracle for F
where
    F: Fn(&Pool, &[usize], &[usize], &mut Rng) -> Result<f64> + Sync,
{
    fn performance(
        &self,
        pool: &Pool,
        base: &[usize],
        selection: &[usize],
        rng: &mut Rng,
    ) -> Result<f64> {
        self(pool, base, selection, rng)
    }
}

/// Retrains a model from scratch and evaluates one metric on the test
/// split. Lower-is-better metrics are negated.
#[derive(Debug, Clone)]
pub struct TrainedPerformance {
    pub model: ModelSpec,
    pub metric: MetricId,
}

impl PerformanceOracle for TrainedPerformance {
    fn performance(
        &self,
        pool: &Pool,
        base: &[usize],
        selection: &[usize],
        rng: &mut Rng,
    ) -> Result<f64> {
        let mut ids: Vec<usize> = base.iter().chain(selection).copied().collect();
        ids.sort_unstable();
        let model = self.model.fit(pool, &ids, rng)?;
        let v = evaluate(pool, model.as_ref(), &pool.test_indices(), &[self.metric])?[0].value;
        Ok(match self.metric.direction() {
            Direction::HigherBetter => v,
            Direction::LowerBetter => -v,
        })
    }

    fn label(&self) -> String {
        match self.metric.direction() {
            Direction::HigherBetter => self.metric.to_string(),
            Direction::LowerBetter => format!("-{}", self.metric),
        }
    }

    fn sign_flipped(&self) -> bool {
        self.metric.direction() == Direction::LowerBetter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub method: String,
    pub rho: f64,
    pub p_value: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub stage: Stage,
    /// What performance means, e.g. `accuracy` or `-ppl`.
    pub performance: String,
    pub sign_flipped: bool,
    pub repeats: usize,
    pub base_size: usize,
    pub budget: usize,
    /// Diversity against performance, one row per distance method.
    pub rows: Vec<CorrelationRow>,
    /// Diversity against diversity for every pair of methods.
    pub pairwise: Vec<PairCorrelation>,
    pub performance_values: Vec<f64>,
    pub diversity_values: Vec<(String, Vec<f64>)>,
}

impl CorrelationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `kind,method,other,rho,p_value,n_samples`; `kind` is `performance`
    /// or `pairwise`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "kind,method,other,rho,p_value,n_samples")?;
        for r in &self.rows {
            writeln!(
                out,
                "performance,{},{},{},{},{}",
                r.method, self.performance, r.rho, r.p_value, r.n_samples
            )?;
        }
        for p in &self.pairwise {
            writeln!(
                out,
                "pairwise,{},{},{},{},{}",
                p.a, p.b, p.rho, p.p_value, p.n_samples
            )?;
        }
        Ok(())
    }
}

const STUDY_STREAM: u64 = 0x57_0D1E;
const BASE_STREAM: u64 = 1;
const BASE_MODEL_STREAM: u64 = 2;
const REPEAT_STREAM: u64 = 1 << 40;

/// Draws `repeats` random one-round selections on top of a fixed base set,
/// measures each selection's diversity under every distance method and the
/// performance reported by `oracle`, and correlates them.
///
/// Vector distances use `study.feature`; embedding and output views come
/// from a model trained on the base set.
pub fn run_correlation_study(
    pool: &Pool,
    run: &RunConfig,
    study: &StudyConfig,
    oracle: &dyn PerformanceOracle,
) -> Result<CorrelationReport> {
    if study.repeats < 10 {
        return Err(Error::config("a study needs at least 10 repeats"));
    }
    if study.distance_methods.is_empty() {
        return Err(Error::config("no distance methods configured"));
    }
    let train = pool.train_indices();
    let base_size = match study.stage {
        Stage::Early => run.init_size,
        Stage::Late => round_budget(train.len(), study.late_fraction),
    };
    let budget = run.round_budget(train.len());
    if budget < 2 {
        return Err(Error::config(
            "round budget must be at least 2 to measure diversity",
        ));
    }
    if base_size + budget > train.len() {
        return Err(Error::config(format!(
            "base set of {base_size} plus budget {budget} exceeds the {} train items",
            train.len()
        )));
    }
    let root = Rng::new(run.seed).derive(STUDY_STREAM);
    let mut base = root.derive(BASE_STREAM).sample(&train, base_size);
    base.sort_unstable();
    let in_base: std::collections::HashSet<usize> = base.iter().copied().collect();
    let rest: Vec<usize> = train
        .iter()
        .copied()
        .filter(|i| !in_base.contains(i))
        .collect();

    let needs_vectors = study.distance_methods.iter().any(|m| m.is_vector());
    let view = if needs_vectors {
        let model = match study.feature {
            FeatureKind::Token => None,
            _ => Some(run.model_for(pool.task_kind()).fit(
                pool,
                &base,
                &mut root.derive(BASE_MODEL_STREAM),
            )?),
        };
        Some(make_feature_view(
            pool,
            &rest,
            study.feature,
            model.as_deref(),
            study.padding,
        )?)
    } else {
        None
    };
    let table = if study.distance_methods.contains(&Metric::GreedyMatch) {
        Some(TokenEmbeddingTable::random(
            pool.vocab_size(),
            study.table_width,
            &mut Rng::new(study.table_seed),
        )?)
    } else {
        None
    };
    let spaces: Vec<Box<dyn DistanceSpace + '_>> = study
        .distance_methods
        .iter()
        .map(|&m| -> Result<Box<dyn DistanceSpace + '_>> {
            if m.is_vector() {
                Ok(Box::new(VectorSpace::new(
                    view.as_ref().expect("vector view"),
                    m,
                )?))
            } else {
                Ok(Box::new(SequenceSpace::new(
                    pool,
                    &rest,
                    m,
                    table.as_ref(),
                )?))
            }
        })
        .collect::<Result<_>>()?;

    let samples: Vec<(Vec<f64>, f64)> = (0..study.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = root.derive(REPEAT_STREAM | r as u64);
            let mut selection = rng.sample(&rest, budget);
            selection.sort_unstable();
            let divs = spaces
                .iter()
                .map(|s| diversity(&selection, s.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let perf = oracle.performance(pool, &base, &selection, &mut rng)?;
            Ok((divs, perf))
        })
        .collect::<Result<_>>()?;

    let performance_values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let diversity_values: Vec<(String, Vec<f64>)> = study
        .distance_methods
        .iter()
        .enumerate()
        .map(|(k, m)| (m.to_string(), samples.iter().map(|s| s.0[k]).collect()))
        .collect();
    let rows = diversity_values
        .iter()
        .map(|(name, d)| {
            let s = spearman(d, &performance_values)?;
            Ok(CorrelationRow {
                method: name.clone(),
                rho: s.rho,
                p_value: s.p_value,
                n_samples: s.n,
            })
        })
        .collect::<Result<_>>()?;
    let pairwise = distance_method_correlation(&diversity_values)?;
    Ok(CorrelationReport {
        stage: study.stage,
        performance: oracle.label(),
        sign_flipped: oracle.sign_flipped(),
        repeats: study.repeats,
        base_size,
        budget,
        rows,
        pairwise,
        performance_values,
        diversity_values,
    })
}

/// [`run_correlation_study`] with a retrained model as the oracle, scored
/// on the first configured metric.
pub fn run_trained_study(
    pool: &Pool,
    run: &RunConfig,
    study: &StudyConfig,
) -> Result<CorrelationReport> {
    run.validate(pool)?;
    let task = pool.task_kind();
    let oracle = TrainedPerformance {
        model: run.model_for(task),
        metric: run.metrics_for(task)[0],
    };
    run_correlation_study(pool, run, study, &oracle)
}
