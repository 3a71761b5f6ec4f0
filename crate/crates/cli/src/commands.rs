use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use alcode::acquisition::{acquire, AcquisitionConfig, AcquisitionContext, Method};
use alcode::analysis::run_trained_study;
use alcode::distance::{
    pairwise_matrix, PairwiseItems, PairwiseOptions, Subsample, TokenEmbeddingTable,
};
use alcode::features::FeatureKind;
use alcode::matrix_io::load_matrix;
use alcode::models::{ExternalModel, ModelOracle, ModelSpec};
use alcode::parallel::with_workers;
use alcode::pool::{load_pool, Pool, PoolSchema};
use alcode::simulator::{compare_runs, run_active_learning, RunLog};
use alcode::synth::{
    clustered_classification, sequence_pool, ClusteredClassification, SequencePool,
};
use alcode::{Error, Result, Rng};

use crate::experiment::ExperimentConfig;
use crate::plot::write_learning_curves;
use crate::{PairwiseArgs, SelectArgs, SynthArgs, SynthKind};

fn read_id_list(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: expected a JSON list of ids: {e}",
            path.display()
        ))
    })
}

fn positions(pool: &Pool, ids: &[i64]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&id| {
            pool.position_of(id)
                .ok_or_else(|| Error::Config(format!("id {id} is not in the pool")))
        })
        .collect()
}

/// File-name friendly form of a method label.
pub fn file_stem(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        if c.is_ascii_alphanumeric() || c == '-' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn needs_model(cfg: &AcquisitionConfig, pool: &Pool) -> bool {
    cfg.method != Method::Random && cfg.feature_for(pool.task_kind()) != Some(FeatureKind::Token)
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let schema = PoolSchema {
        num_classes: args.num_classes,
        ..PoolSchema::default()
    };
    let pool = load_pool(&args.pool, &schema)?;
    let task = pool.task_kind();
    let mut cfg = AcquisitionConfig::new(args.method).with_distance(args.distance);
    if let Some(f) = args.feature {
        cfg = cfg.with_feature(f);
    }
    cfg.check_task(task)?;

    let labeled = match &args.labeled {
        Some(p) => {
            let mut l = positions(&pool, &read_id_list(p)?)?;
            l.sort_unstable();
            l.dedup();
            l
        }
        None => Vec::new(),
    };
    let labeled_set: HashSet<usize> = labeled.iter().copied().collect();
    let mut candidates: Vec<usize> = pool
        .train_indices()
        .into_iter()
        .filter(|i| !labeled_set.contains(i))
        .collect();

    let mut rng = Rng::new(args.seed);
    let external = args.proba.is_some() || args.embed.is_some();
    let model: Option<Box<dyn ModelOracle>> = if external {
        let ids = match &args.ids {
            Some(p) => read_id_list(p)?,
            None => pool.original_ids().to_vec(),
        };
        let outputs = args.proba.as_ref().map(load_matrix).transpose()?;
        let embeddings = args.embed.as_ref().map(load_matrix).transpose()?;
        let covered: HashSet<usize> = positions(&pool, &ids)?.into_iter().collect();
        candidates.retain(|i| covered.contains(i));
        Some(Box::new(ExternalModel::from_matrices(
            &pool, &ids, outputs, embeddings,
        )?))
    } else if needs_model(&cfg, &pool) {
        if labeled.is_empty() {
            return Err(Error::Capability(format!(
                "{} needs a model: pass --labeled to train one, or --proba/--embed",
                cfg.label(task)
            )));
        }
        let spec = ModelSpec::default_for(task);
        let mut train_rng = rng.derive(1);
        Some(with_workers(args.workers, || {
            spec.fit(&pool, &labeled, &mut train_rng)
        })?)
    } else {
        None
    };

    let ctx = AcquisitionContext {
        pool: &pool,
        model: model.as_deref(),
        labeled: &labeled,
        candidates: &candidates,
        budget: args.budget,
    };
    let selection = with_workers(args.workers, || acquire(&cfg, &ctx, &mut rng))?;

    fs::create_dir_all(&args.out)?;
    let ids: Vec<i64> = selection
        .indices
        .iter()
        .map(|&i| pool.original_id(i))
        .collect();
    fs::write(
        args.out.join("selection.json"),
        serde_json::to_string(&ids)? + "\n",
    )?;
    let mut csv = BufWriter::new(File::create(args.out.join("scores.csv"))?);
    writeln!(csv, "rank,id,score")?;
    for (rank, (id, score)) in ids.iter().zip(&selection.scores).enumerate() {
        writeln!(csv, "{rank},{id},{score}")?;
    }
    csv.flush()?;
    log::info!("selected {} items with {}", ids.len(), selection.method);
    Ok(())
}

pub fn simulate(path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let pool = cfg.pool.load()?;
    let task = pool.task_kind();
    let methods = if cfg.acquisition.is_empty() {
        vec![AcquisitionConfig::default()]
    } else {
        cfg.acquisition.clone()
    };

    let mut seen = HashSet::new();
    for acq in &methods {
        let label = acq.label(task);
        if !seen.insert(file_stem(&label)) {
            return Err(Error::Config(format!(
                "method '{label}' is configured twice"
            )));
        }
        for &seed in &cfg.seeds {
            cfg.run_config(acq, seed).validate(&pool)?;
        }
    }

    let runs_dir = cfg.output_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut logs: Vec<RunLog> = Vec::new();
    for acq in &methods {
        for &seed in &cfg.seeds {
            let run = cfg.run_config(acq, seed);
            log::info!("running {} with seed {seed}", acq.label(task));
            let log = with_workers(cfg.workers, || run_active_learning(&pool, &run))?;
            log.save(&runs_dir, &format!("{}_seed{seed}", file_stem(&log.method)))?;
            logs.push(log);
        }
    }

    let table = compare_runs(&logs, &cfg.budgets.checkpoints)?;
    let mut csv = BufWriter::new(File::create(cfg.output_dir.join("comparison.csv"))?);
    table.write_csv(&mut csv)?;
    csv.flush()?;
    fs::write(
        cfg.output_dir.join("comparison.json"),
        serde_json::to_string_pretty(&table)? + "\n",
    )?;
    if cfg.plot {
        write_learning_curves(&cfg.output_dir.join("curves.svg"), &logs)?;
    }
    Ok(())
}

pub fn study(path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let study = cfg
        .study
        .clone()
        .ok_or_else(|| Error::Config("the config has no study section".into()))?;
    let pool = cfg.pool.load()?;
    let acq = cfg.acquisition.first().cloned().unwrap_or_default();
    let dir = cfg.output_dir.join("study");
    fs::create_dir_all(&dir)?;
    for &seed in &cfg.seeds {
        let run = cfg.run_config(&acq, seed);
        let report = with_workers(cfg.workers, || run_trained_study(&pool, &run, &study))?;
        fs::write(
            dir.join(format!("seed{seed}.json")),
            report.to_json()? + "\n",
        )?;
        let mut csv = BufWriter::new(File::create(dir.join(format!("seed{seed}.csv")))?);
        report.write_csv(&mut csv)?;
        csv.flush()?;
    }
    Ok(())
}

pub fn pairwise(args: &PairwiseArgs) -> Result<()> {
    let pool = load_pool(&args.pool, &PoolSchema::default())?;
    let table = if args.metric.is_vector() {
        None
    } else {
        let mut rng = Rng::new(args.table_seed);
        Some(TokenEmbeddingTable::random(
            pool.vocab_size(),
            args.table_width,
            &mut rng,
        )?)
    };
    let opts = PairwiseOptions {
        workers: args.workers,
        subsample: args.subsample.map(|count| Subsample {
            count,
            seed: args.seed,
        }),
        table: table.as_ref(),
    };

    let matrix = if args.metric.is_vector() {
        let path = args.features.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "--metric {} needs a feature source (--features)",
                args.metric
            ))
        })?;
        let features = load_matrix(path)?;
        if features.nrows() != pool.len() {
            return Err(Error::Config(format!(
                "feature matrix has {} rows for {} pool items",
                features.nrows(),
                pool.len()
            )));
        }
        pairwise_matrix(PairwiseItems::Vectors(features.view()), args.metric, &opts)?
    } else {
        let seqs: Vec<Vec<u32>> = (0..pool.len()).map(|i| pool.tokens(i).to_vec()).collect();
        pairwise_matrix(PairwiseItems::Sequences(&seqs), args.metric, &opts)?
    };

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(&args.out)?);
    matrix.write_alfv(&mut out)?;
    out.flush()?;
    fs::write(
        args.out.with_extension("json"),
        serde_json::to_string_pretty(&matrix.sidecar())? + "\n",
    )?;
    Ok(())
}

fn read_params<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| {
            Error::Config(format!("invalid generator parameters {}: {e}", p.display()))
        }),
        None => Ok(T::default()),
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let pool = match args.kind {
        SynthKind::Classification => {
            let mut params: ClusteredClassification = read_params(args.params.as_deref())?;
            params.seed = args.seed.unwrap_or(params.seed);
            clustered_classification(&params)?
        }
        SynthKind::Sequence => {
            let mut params: SequencePool = read_params(args.params.as_deref())?;
            params.seed = args.seed.unwrap_or(params.seed);
            sequence_pool(&params)?
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    pool.save(&args.out)
}
