use std::collections::BTreeMap;
use std::fs;

use iacos::checkpoint;
use iacos::config::{Selection, TrainConfig};
use iacos::corpus::QuadType;
use iacos::experiment::{curve_from_logs, read_metric_log, run_ablation};
use iacos::metrics::{evaluate, Evaluation, Score};
use iacos::objective::LossReport;
use iacos::pipeline::predict_examples;
use iacos::synthetic;
use iacos::trainer::{select_checkpoint, select_epoch, train, EpochEval, Splits, TrialResult};

fn splits() -> Splits {
    let vocab = synthetic::vocab();
    Splits::new(
        (synthetic::corpus(14, 1), vocab.clone()),
        Some((synthetic::corpus(7, 2), vocab.clone())),
        Some((synthetic::corpus(7, 3), vocab)),
    )
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        report_epoch: epochs,
        eval_every: 5,
        batch_size: 4,
        learning_rate: 1e-2,
        head_count: 4,
        save_checkpoints: false,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_run() {
    let s = splits();
    let a = train(&s, &config(10), 7).unwrap().result;
    let b = train(&s, &config(10), 7).unwrap().result;
    assert_eq!(a, b);
    let c = train(&s, &config(10), 8).unwrap().result;
    assert_ne!(a.epoch_losses, c.epoch_losses);
}

#[test]
fn loss_goes_down() {
    let result = train(&splits(), &config(40), 1).unwrap().result;
    let first = result.epoch_losses[0].total;
    let last = result.epoch_losses.last().unwrap().total;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(result.epoch_losses.iter().all(LossReport::is_finite));
}

#[test]
fn reloaded_checkpoint_reproduces_scores() {
    let dir = tempfile::tempdir().unwrap();
    let s = splits();
    let cfg = TrainConfig {
        output_dir: Some(dir.path().to_path_buf()),
        save_checkpoints: true,
        ..config(10)
    };
    let trained = train(&s, &cfg, 2).unwrap();
    let result = &trained.result;
    assert_eq!(result.checkpoints.keys().copied().collect::<Vec<_>>(), vec![5, 10]);
    for f in ["config.toml", "steps.jsonl", "metrics.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // 14 sentences in batches of 4 over 10 epochs
    let steps = fs::read_to_string(dir.path().join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 40);
    let metrics = read_metric_log(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.len(), 4);
    assert_eq!(curve_from_logs(&[metrics], "test", 2).len(), 2);

    let path = result.best_checkpoint.clone().unwrap();
    assert_eq!(path, select_checkpoint(result, Selection::FixedEpoch, 10).unwrap());
    let model = checkpoint::load(&path).unwrap();
    let preds: Vec<_> = predict_examples(&model, &s.test).unwrap().iter().map(|p| p.quads()).collect();
    let golds: Vec<_> = s.test.iter().map(|e| e.gold.clone()).collect();
    let again = evaluate(&preds, &golds, &model.vocab).unwrap();
    assert_eq!(Some(&again), result.selected_test());

    let resolved = TrainConfig::from_file(dir.path().join("config.toml")).unwrap();
    assert_eq!(resolved.seeds, vec![2]);
}

#[test]
fn divergence_aborts_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e300,
        output_dir: Some(dir.path().to_path_buf()),
        ..config(5)
    };
    let err = train(&splits(), &cfg, 1).err().expect("training diverges");
    assert_eq!(err.kind(), "training", "{err}");
    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("nan_dump.json")).unwrap()).unwrap();
    assert!(dump["batch"].as_array().is_some_and(|b| !b.is_empty()));
}

fn eval_with_dev(epoch: usize, dev_f1: f64) -> EpochEval {
    let score = Score {
        f1: dev_f1,
        ..Default::default()
    };
    let by_type = QuadType::ALL.iter().map(|&t| (t, Score::default())).collect();
    EpochEval {
        epoch,
        loss: LossReport::default(),
        dev: Some(Evaluation { overall: score, by_type }),
        test: None,
    }
}

#[test]
fn checkpoint_selection_policies() {
    let evals = vec![
        eval_with_dev(10, 0.2),
        eval_with_dev(20, 0.5),
        eval_with_dev(30, 0.5),
        eval_with_dev(40, 0.4),
    ];
    assert_eq!(select_epoch(&evals, Selection::FixedEpoch, 30).unwrap(), 30);
    // ties go to the earlier epoch
    assert_eq!(select_epoch(&evals, Selection::BestValidation, 30).unwrap(), 20);
    assert!(select_epoch(&evals, Selection::FixedEpoch, 35).is_err());

    let monotone: Vec<_> = (1..=4).map(|i| eval_with_dev(i * 10, i as f64 / 10.0)).collect();
    assert_eq!(select_epoch(&monotone, Selection::BestValidation, 10).unwrap(), 40);

    let result = TrialResult {
        seed: 1,
        epoch_losses: Vec::new(),
        evals,
        checkpoints: BTreeMap::from([(20, "ckpt/epoch-0020".into())]),
        selection: Selection::BestValidation,
        selected_epoch: 20,
        best_checkpoint: None,
    };
    assert_eq!(
        select_checkpoint(&result, Selection::BestValidation, 30).unwrap(),
        std::path::PathBuf::from("ckpt/epoch-0020")
    );
    assert_eq!(select_checkpoint(&result, Selection::FixedEpoch, 30).unwrap_err().kind(), "checkpoint");
}

#[test]
fn best_validation_without_dev_falls_back() {
    let vocab = synthetic::vocab();
    let s = Splits::new((synthetic::corpus(7, 1), vocab.clone()), None, Some((synthetic::corpus(7, 3), vocab))).unwrap();
    let cfg = TrainConfig {
        selection: Selection::BestValidation,
        ..config(5)
    };
    let result = train(&s, &cfg, 1).unwrap().result;
    assert_eq!(result.selection, Selection::FixedEpoch);
    assert_eq!(result.selected_epoch, 5);
}

#[test]
fn unseen_test_categories_extend_the_vocabulary() {
    let train_vocab = iacos::LabelVocab::new(["FOOD#QUALITY"]).unwrap();
    let train_set: Vec<_> = synthetic::corpus(7, 1)
        .into_iter()
        .map(|mut e| {
            e.gold.iter_mut().for_each(|q| q.category = 0);
            e
        })
        .collect();
    let s = Splits::new((train_set, train_vocab), None, Some((synthetic::corpus(7, 3), synthetic::vocab()))).unwrap();
    assert_eq!(s.vocab.num_categories(), 4);
    assert_eq!(s.vocab.categories()[0], "FOOD#QUALITY");
    for q in s.test.iter().flat_map(|e| &e.gold) {
        assert!(q.category < 4);
    }
}

#[test]
fn ablation_grid_writes_its_summary() {
    let dir = tempfile::tempdir().unwrap();
    let base = TrainConfig {
        output_dir: Some(dir.path().to_path_buf()),
        seeds: vec![1, 2],
        ..config(5)
    };
    let ablation = run_ablation("attention", &base, &splits()).unwrap();
    assert_eq!(ablation.rows.len(), 2);
    for row in &ablation.rows {
        assert_eq!(row.trials.len(), 2);
        assert!(row.std.f1 >= 0.0);
        assert_eq!(row.by_type_f1.len(), 4);
    }
    assert!(dir.path().join("mean/seed-2/metrics.jsonl").exists());
    let table = fs::read_to_string(dir.path().join("table.txt")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("ablation.json").exists());
}
