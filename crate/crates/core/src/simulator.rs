//! The active-learning loop: initialise, then select, label, retrain and
//! evaluate for a fixed number of rounds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::acquisition::{acquire, argmax, AcquisitionContext};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, corpus_bleu, f1_binary, perplexity, Direction, MetricId, MetricValue, MAX_NGRAM,
};
use crate::models::ModelOracle;
use crate::pool::{Pool, TaskKind};
use crate::rng::Rng;

const INIT_STREAM: u64 = 0x1417_0000;
const ACQUIRE_STREAM: u64 = 1 << 32;
const TRAIN_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the random initialisation.
    pub round: usize,
    /// Cumulative labeled count after this round.
    pub labeled: usize,
    /// Original pool ids of the items labeled in this round.
    pub selected_ids: Vec<i64>,
    pub metrics: Vec<MetricValue>,
    /// Pool indices of the same items.
    #[serde(skip)]
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub version: String,
    pub seed: u64,
    pub method: String,
    pub task: TaskKind,
    pub train_size: usize,
    pub metrics: Vec<MetricId>,
    pub config: RunConfig,
    pub rounds: Vec<RoundRecord>,
}

impl RunLog {
    pub fn labeled_counts(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.labeled).collect()
    }

    pub fn metric_series(&self, metric: MetricId) -> Option<Vec<f64>> {
        let col = self.metrics.iter().position(|&m| m == metric)?;
        Some(self.rounds.iter().map(|r| r.metrics[col].value).collect())
    }

    /// `round,labeled,<metric>...` with one row per round.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "round,labeled")?;
        for m in &self.metrics {
            write!(out, ",{m}")?;
        }
        writeln!(out)?;
        for r in &self.rounds {
            write!(out, "{},{}", r.round, r.labeled)?;
            for v in &r.metrics {
                write!(out, ",{}", v.value)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Wall-clock data kept out of the reproducible files.
    pub fn meta_json(&self) -> Result<String> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let times: Vec<f64> = self.rounds.iter().map(|r| r.train_seconds).collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "written_unix": stamp,
            "train_seconds": times,
        }))?)
    }

    /// Writes `<stem>.csv`, `<stem>.json` and `<stem>.meta.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        fs::write(dir.join(format!("{stem}.json")), self.to_json()? + "\n")?;
        fs::write(
            dir.join(format!("{stem}.meta.json")),
            self.meta_json()? + "\n",
        )?;
        Ok(())
    }
}

/// Evaluates `metrics` for `model` on the items `ids`.
pub fn evaluate(
    pool: &Pool,
    model: &dyn ModelOracle,
    ids: &[usize],
    metrics: &[MetricId],
) -> Result<Vec<MetricValue>> {
    if ids.is_empty() {
        return Err(Error::config("pool has no test items to evaluate on"));
    }
    let mut predictions: Option<Vec<usize>> = None;
    let mut out = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let value = match metric {
            MetricId::Accuracy | MetricId::F1 => {
                if predictions.is_none() {
                    let probs = model.predict_proba(pool, ids)?;
                    predictions = Some(probs.view().rows().into_iter().map(argmax).collect());
                }
                let pred = predictions.as_deref().unwrap();
                let labels = pool.class_labels(ids)?;
                if metric == MetricId::Accuracy {
                    accuracy(pred, &labels)?
                } else {
                    f1_binary(pred, &labels, 1)?
                }
            }
            MetricId::Ppl => perplexity(&model.reference_loglikelihoods(pool, ids)?.concat())?,
            MetricId::Bleu => {
                let gens = model.generate(pool, ids)?;
                let cands: Vec<Vec<u32>> = gens.into_iter().map(|g| g.tokens).collect();
                let refs = ids
                    .iter()
                    .map(|&i| {
                        pool.reference(i)
                            .map(<[u32]>::to_vec)
                            .ok_or_else(|| Error::capability("pool has no reference sequences"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                corpus_bleu(&cands, &refs, MAX_NGRAM)?
            }
        };
        out.push(MetricValue::new(metric, value));
    }
    Ok(out)
}

fn train_and_evaluate(
    pool: &Pool,
    cfg: &RunConfig,
    labeled: &[usize],
    test: &[usize],
    metrics: &[MetricId],
    round: usize,
    root: &Rng,
) -> Result<(Box<dyn ModelOracle>, Vec<MetricValue>, f64)> {
    let mut sorted = labeled.to_vec();
    sorted.sort_unstable();
    let start = Instant::now();
    let model = cfg.model_for(pool.task_kind()).fit(
        pool,
        &sorted,
        &mut root.derive(TRAIN_STREAM | round as u64),
    )?;
    let secs = start.elapsed().as_secs_f64();
    let values = evaluate(pool, model.as_ref(), test, metrics)?;
    Ok((model, values, secs))
}

/// Runs the loop described by `cfg` on `pool`. The result depends only on
/// `(pool, cfg)`.
pub fn run_active_learning(pool: &Pool, cfg: &RunConfig) -> Result<RunLog> {
    cfg.validate(pool)?;
    let task = pool.task_kind();
    let train = pool.train_indices();
    let test = pool.test_indices();
    let metrics = cfg.metrics_for(task);
    let budget = cfg.round_budget(train.len());
    let root = Rng::new(cfg.seed);

    let init = root.derive(INIT_STREAM).sample(&train, cfg.init_size);
    let mut is_labeled = vec![false; pool.len()];
    for &i in &init {
        is_labeled[i] = true;
    }
    let mut labeled = init.clone();
    let (mut model, values, secs) =
        train_and_evaluate(pool, cfg, &labeled, &test, &metrics, 0, &root)?;
    let mut rounds = vec![RoundRecord {
        round: 0,
        labeled: labeled.len(),
        selected_ids: init.iter().map(|&i| pool.original_id(i)).collect(),
        metrics: values,
        selected: init,
        train_seconds: secs,
    }];

    for round in 1..=cfg.rounds {
        let candidates: Vec<usize> = train.iter().copied().filter(|&i| !is_labeled[i]).collect();
        if candidates.is_empty() {
            log::warn!("train split exhausted after round {}; stopping", round - 1);
            break;
        }
        let this_budget = budget.min(candidates.len());
        if this_budget < budget {
            log::info!(
                "round {round}: clipping budget {budget} to the {this_budget} remaining candidates"
            );
        }
        let mut sorted_labeled = labeled.clone();
        sorted_labeled.sort_unstable();
        let ctx = AcquisitionContext {
            pool,
            model: Some(model.as_ref()),
            labeled: &sorted_labeled,
            candidates: &candidates,
            budget: this_budget,
        };
        let sel = acquire(
            &cfg.acquisition,
            &ctx,
            &mut root.derive(ACQUIRE_STREAM | round as u64),
        )?;
        for &i in &sel.indices {
            if i >= pool.len() || is_labeled[i] || !candidates.binary_search(&i).is_ok() {
                return Err(Error::Numerical(format!(
                    "acquisition returned an invalid index {i}"
                )));
            }
            is_labeled[i] = true;
        }
        labeled.extend_from_slice(&sel.indices);
        let (next, values, secs) =
            train_and_evaluate(pool, cfg, &labeled, &test, &metrics, round, &root)?;
        model = next;
        log::info!("round {round}: {} labeled", labeled.len());
        rounds.push(RoundRecord {
            round,
            labeled: labeled.len(),
            selected_ids: sel.indices.iter().map(|&i| pool.original_id(i)).collect(),
            metrics: values,
            selected: sel.indices,
            train_seconds: secs,
        });
    }

    Ok(RunLog {
        version: crate::VERSION.to_string(),
        seed: cfg.seed,
        method: cfg.acquisition.label(task),
        task,
        train_size: train.len(),
        metrics,
        config: cfg.clone(),
        rounds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankFlag {
    Best,
    SecondBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub metric: MetricId,
    /// Requested fraction of the train split.
    pub checkpoint: f64,
    /// Labeled count of the round used.
    pub labeled: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub mean: f64,
    /// Sample standard deviation over repeats; 0 for a single run.
    pub std: f64,
    pub flag: Option<RankFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<ComparisonColumn>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "method,runs")?;
        for c in &self.columns {
            write!(
                out,
                ",{0}@{1}_mean,{0}@{1}_std,{0}@{1}_flag",
                c.metric, c.labeled
            )?;
        }
        writeln!(out)?;
        for r in &self.rows {
            write!(out, "{},{}", r.method, r.runs)?;
            for cell in &r.cells {
                let flag = match cell.flag {
                    Some(RankFlag::Best) => "best",
                    Some(RankFlag::SecondBest) => "second",
                    None => "",
                };
                write!(out, ",{},{},{}", cell.mean, cell.std, flag)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Tabulates logs by method at budget checkpoints (fractions of the train
/// split; the round with the nearest labeled count is used). Logs with the
/// same method label are treated as repeats. An empty `checkpoints` uses the
/// final round.
pub fn compare_runs(logs: &[RunLog], checkpoints: &[f64]) -> Result<ComparisonTable> {
    let first = logs
        .first()
        .ok_or_else(|| Error::invalid("no run logs to compare"))?;
    let counts = first.labeled_counts();
    for log in logs {
        if log.metrics != first.metrics {
            return Err(Error::invalid("mismatched metric sets"));
        }
        if log.labeled_counts() != counts || log.train_size != first.train_size {
            return Err(Error::invalid("run logs do not share a round structure"));
        }
    }
    let mut rounds = Vec::new();
    if checkpoints.is_empty() {
        rounds.push((
            counts.len() - 1,
            counts.len() as f64 / first.train_size as f64,
        ));
    }
    for &cp in checkpoints {
        if !(cp > 0.0 && cp <= 1.0) {
            return Err(Error::invalid(format!(
                "checkpoint {cp} is not a fraction in (0, 1]"
            )));
        }
        let target = cp * first.train_size as f64;
        let best = counts
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (*a.1 as f64 - target)
                    .abs()
                    .total_cmp(&(*b.1 as f64 - target).abs())
            })
            .map(|(i, _)| i)
            .unwrap();
        rounds.push((best, cp));
    }
    let mut columns = Vec::new();
    for &(round, cp) in &rounds {
        for &metric in &first.metrics {
            columns.push(ComparisonColumn {
                metric,
                checkpoint: cp,
                labeled: counts[round],
                round,
            });
        }
    }

    let mut methods: Vec<&str> = Vec::new();
    for log in logs {
        if !methods.contains(&log.method.as_str()) {
            methods.push(&log.method);
        }
    }
    let mut rows: Vec<ComparisonRow> = methods
        .iter()
        .map(|&method| {
            let group: Vec<&RunLog> = logs.iter().filter(|l| l.method == method).collect();
            let cells = columns
                .iter()
                .map(|col| {
                    let k = first.metrics.iter().position(|&m| m == col.metric).unwrap();
                    let vals: Vec<f64> = group
                        .iter()
                        .map(|l| l.rounds[col.round].metrics[k].value)
                        .collect();
                    let (mean, std) = mean_std(&vals);
                    ComparisonCell {
                        mean,
                        std,
                        flag: None,
                    }
                })
                .collect();
            ComparisonRow {
                method: method.to_string(),
                runs: group.len(),
                cells,
            }
        })
        .collect();

    if rows.len() >= 2 {
        for (c, col) in columns.iter().enumerate() {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| {
                let (x, y) = (rows[a].cells[c].mean, rows[b].cells[c].mean);
                match col.metric.direction() {
                    Direction::HigherBetter => y.total_cmp(&x),
                    Direction::LowerBetter => x.total_cmp(&y),
                }
            });
            rows[order[0]].cells[c].flag = Some(RankFlag::Best);
            rows[order[1]].cells[c].flag = Some(RankFlag::SecondBest);
        }
    }
    Ok(ComparisonTable { columns, rows })
}
