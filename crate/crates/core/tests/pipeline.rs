use std::fs;
use std::io::{BufWriter, Write};

use alcode::acquisition::{AcquisitionConfig, Method};
use alcode::analysis::{run_correlation_study, Stage, StudyConfig};
use alcode::config::RunConfig;
use alcode::distance::Metric;
use alcode::features::{make_feature_view, FeatureKind, Padding};
use alcode::metrics::MetricId;
use alcode::models::{ClassifierConfig, ModelSpec};
use alcode::simulator::{compare_runs, run_active_learning, RunLog};
use alcode::synth::{
    clustered_classification, sequence_pool, ClusteredClassification, SequencePool,
};
use alcode::{load_pool, Pool, PoolSchema, Rng, TaskKind};
use tempfile::TempDir;

fn small_pool(seed: u64) -> Pool {
    clustered_classification(&ClusteredClassification {
        num_classes: 4,
        train: 300,
        test: 100,
        vocab_size: 150,
        topic_tokens: 10,
        signal: 0.35,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn quick_model() -> ModelSpec {
    ModelSpec::Classifier(ClassifierConfig {
        hidden_width: 16,
        epochs: 3,
        ..Default::default()
    })
}

#[test]
fn large_pool_split_sizes() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("big.jsonl");
    let mut out = BufWriter::new(fs::File::create(&path).unwrap());
    for i in 0..75_000u32 {
        let split = if i < 62_500 { "train" } else { "test" };
        writeln!(
            out,
            r#"{{"id":{i},"tokens":[{},{}],"label":{},"split":"{split}"}}"#,
            i % 97,
            i % 13,
            i % 250
        )
        .unwrap();
    }
    out.flush().unwrap();
    drop(out);
    let pool = load_pool(
        &path,
        &PoolSchema::new(TaskKind::Classification).with_num_classes(250),
    )
    .unwrap();
    assert_eq!(pool.train_indices().len(), 62_500);
    assert_eq!(pool.test_indices().len(), 12_500);
    assert_eq!(pool.vocab_size(), 97);
}

#[test]
fn save_then_load_is_identity() {
    let tmp = TempDir::new().unwrap();
    for pool in [
        small_pool(1),
        sequence_pool(&SequencePool {
            items: 40,
            test: 10,
            ..Default::default()
        })
        .unwrap(),
    ] {
        let path = tmp.path().join("p.jsonl");
        pool.save(&path).unwrap();
        let schema = PoolSchema {
            task_kind: Some(pool.task_kind()),
            vocab_size: Some(pool.vocab_size()),
            num_classes: pool.num_classes(),
        };
        assert_eq!(load_pool(&path, &schema).unwrap(), pool);
    }
}

#[test]
fn token_view_pads_and_truncates() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("p.jsonl");
    fs::write(
        &path,
        "{\"id\":0,\"tokens\":[5,7],\"label\":3,\"split\":\"train\"}\n{\"id\":1,\"tokens\":[5,7,9,1,2],\"label\":1,\"split\":\"train\"}\n",
    )
    .unwrap();
    let pool = load_pool(
        &path,
        &PoolSchema::new(TaskKind::Classification)
            .with_vocab_size(10)
            .with_num_classes(4),
    )
    .unwrap();
    let view = make_feature_view(
        &pool,
        &[0, 1],
        FeatureKind::Token,
        None,
        Padding { len: 4, pad_id: 0 },
    )
    .unwrap();
    assert_eq!(view.matrix().row(0).to_vec(), vec![5.0, 7.0, 0.0, 0.0]);
    assert_eq!(view.matrix().row(1).to_vec(), vec![5.0, 7.0, 9.0, 1.0]);
    assert!(make_feature_view(&pool, &[0], FeatureKind::Output, None, Padding::default()).is_err());
}

#[test]
fn trained_output_rows_are_distributions() {
    for seed in 0..3 {
        let pool = small_pool(seed);
        let train = pool.train_indices();
        let model = quick_model()
            .fit(&pool, &train[..60], &mut Rng::new(seed))
            .unwrap();
        let view = make_feature_view(
            &pool,
            &train,
            FeatureKind::Output,
            Some(model.as_ref()),
            Padding::default(),
        )
        .unwrap();
        for row in view.matrix().rows() {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn classification_runs_end_to_end() {
    let pool = small_pool(5);
    let mut logs: Vec<RunLog> = Vec::new();
    for method in [
        Method::Random,
        Method::Entropy,
        Method::KMeans,
        Method::Coreset,
    ] {
        for seed in [1, 2] {
            let cfg = RunConfig {
                init_size: 30,
                round_fraction: 0.05,
                rounds: 3,
                seed,
                acquisition: AcquisitionConfig::new(method),
                model: Some(quick_model()),
                metrics: vec![MetricId::Accuracy],
            };
            let log = run_active_learning(&pool, &cfg).unwrap();
            assert_eq!(log.labeled_counts(), vec![30, 45, 60, 75]);
            let mut seen: Vec<i64> = log
                .rounds
                .iter()
                .flat_map(|r| r.selected_ids.clone())
                .collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 75, "no item is labeled twice");
            let acc = log.metric_series(MetricId::Accuracy).unwrap();
            assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)));
            logs.push(log);
        }
    }
    let table = compare_runs(&logs, &[]).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.runs == 2));
}

#[test]
fn sequence_runs_end_to_end() {
    let pool = sequence_pool(&SequencePool {
        items: 80,
        test: 20,
        ..Default::default()
    })
    .unwrap();
    let cfg = RunConfig {
        init_size: 20,
        round_fraction: 0.1,
        rounds: 2,
        seed: 3,
        acquisition: AcquisitionConfig::new(Method::KCenter).with_distance(Metric::Bleu),
        model: Some(ModelSpec::Seq2seq(alcode::models::SeqModelConfig {
            epochs: 2,
            ..Default::default()
        })),
        metrics: vec![MetricId::Bleu, MetricId::Ppl],
    };
    let log = run_active_learning(&pool, &cfg).unwrap();
    assert_eq!(log.labeled_counts(), vec![20, 28, 36]);
    for ppl in log.metric_series(MetricId::Ppl).unwrap() {
        assert!(ppl >= 1.0 && ppl.is_finite());
    }
    for b in log.metric_series(MetricId::Bleu).unwrap() {
        assert!((0.0..=1.0).contains(&b));
    }
}

/// With performance drawn independently of the selection, |rho| >= 0.2 over
/// 100 repeats should occur about 4.6% of the time.
#[test]
fn null_correlation_is_calibrated() {
    let pool = clustered_classification(&ClusteredClassification {
        num_classes: 4,
        train: 400,
        test: 10,
        vocab_size: 100,
        topic_tokens: 8,
        min_len: 4,
        max_len: 10,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let study = StudyConfig {
        stage: Stage::Early,
        repeats: 100,
        distance_methods: vec![Metric::Euclidean],
        feature: FeatureKind::Token,
        padding: Padding { len: 10, pad_id: 0 },
        ..Default::default()
    };
    let independent = |_: &Pool, _: &[usize], _: &[usize], rng: &mut Rng| -> alcode::Result<f64> {
        Ok(rng.normal())
    };
    let metas = 400u64;
    let mut extreme = 0;
    for meta in 0..metas {
        let run = RunConfig {
            init_size: 40,
            round_fraction: 0.05,
            seed: 50_000 + meta,
            ..RunConfig::default()
        };
        let report = run_correlation_study(&pool, &run, &study, &independent).unwrap();
        if report.rows[0].rho.abs() >= 0.2 {
            extreme += 1;
        }
    }
    let rate = extreme as f64 / metas as f64;
    assert!((0.02..=0.08).contains(&rate), "null rate {rate}");
}
