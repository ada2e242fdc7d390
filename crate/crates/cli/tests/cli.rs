use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iacos::corpus::save_canonical;
use iacos::synthetic;

fn iacos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iacos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(dir: &Path) {
    let vocab = synthetic::vocab();
    save_canonical(&synthetic::corpus(14, 1), &vocab, dir.join("train.jsonl")).unwrap();
    save_canonical(&synthetic::corpus(7, 2), &vocab, dir.join("dev.jsonl")).unwrap();
    save_canonical(&synthetic::corpus(7, 3), &vocab, dir.join("test.jsonl")).unwrap();
    let config = format!(
        "train_path = {:?}\ndev_path = {:?}\ntest_path = {:?}\n\
         epochs = 30\nreport_epoch = 30\neval_every = 10\nbatch_size = 4\n\
         learning_rate = 0.01\nhead_count = 4\nseeds = [1]\n",
        dir.join("train.jsonl"),
        dir.join("dev.jsonl"),
        dir.join("test.jsonl"),
    );
    fs::write(dir.join("config.toml"), config).unwrap();
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_verb_prints_usage_and_exits_2() {
    let o = iacos(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn missing_file_is_one_parsable_line() {
    let o = iacos(&["eval", "--pred", "/nonexistent/p.jsonl", "--data", "/nonexistent/g.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=io: "), "{err}");
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = dir.path().join("config.toml");
    let o = iacos(&["train", "--config", path(&cfg), "--set", "epochz=3", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=config: "), "{}", stderr(&o));
}

#[test]
fn import_converts_acos_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("rest.tsv");
    fs::write(
        &tsv,
        "the pizza was great\t1,2 FOOD#QUALITY 2 3,4\nwill come back\t-1,-1 RESTAURANT#GENERAL 2 -1,-1\n",
    )
    .unwrap();
    let out = dir.path().join("rest.jsonl");
    let o = iacos(&["import", "--in", path(&tsv), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("sentences=2 quadruples=2 categories=2"), "{}", stdout(&o));
    let (examples, vocab) = iacos::corpus::load_canonical(&out).unwrap();
    assert_eq!(examples.len(), 2);
    assert_eq!(vocab.categories(), ["FOOD#QUALITY", "RESTAURANT#GENERAL"]);
    assert!(dir.path().join("rest.jsonl.run.toml").exists());
}

#[test]
fn eval_on_gold_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = synthetic::vocab();
    let gold = synthetic::corpus(10, 5);
    let data = dir.path().join("gold.jsonl");
    save_canonical(&gold, &vocab, &data).unwrap();
    let sentences: Vec<_> = gold
        .iter()
        .map(|e| {
            let pred = iacos::pipeline::Prediction {
                quadruples: e.gold.iter().map(|q| (*q, 0.9)).collect(),
            };
            (e.tokens.clone(), pred)
        })
        .collect();
    let pred = dir.path().join("pred.jsonl");
    iacos::pipeline::write_predictions(&pred, &vocab, &sentences).unwrap();

    let out = dir.path().join("scores.json");
    let o = iacos(&["eval", "--pred", path(&pred), "--data", path(&data), "--by-type", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("F1=1.0000"), "{text}");
    assert_eq!(text.lines().count(), 5);
    assert!(out.exists());
    assert!(dir.path().join("scores.json.run.toml").exists());
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let run = dir.path().join("run");
    let o = iacos(&[
        "train",
        "--config",
        path(&dir.path().join("config.toml")),
        "--seed",
        "3",
        "--negatives",
        "adaptive",
        "--out",
        path(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("seed=3 selected_epoch=30"), "{line}");
    for f in ["config.toml", "steps.jsonl", "metrics.jsonl", "trial.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let ckpt = run.join("checkpoints").join("epoch-0030");
    assert!(ckpt.join("manifest.json").exists());

    let pred = dir.path().join("pred.jsonl");
    let test = dir.path().join("test.jsonl");
    let o = iacos(&["predict", "--model", path(&ckpt), "--in", path(&test), "--out", path(&pred)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("sentences=7"));

    // scoring the written file equals scoring the checkpoint directly
    let a = iacos(&["eval", "--pred", path(&pred), "--data", path(&test)]);
    let b = iacos(&["eval", "--model", path(&ckpt), "--data", path(&test)]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));

    // the resolved config reproduces the run
    let again = dir.path().join("again");
    let o = iacos(&["train", "--config", path(&run.join("config.toml")), "--out", path(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(run.join("metrics.jsonl")).unwrap(),
        fs::read_to_string(again.join("metrics.jsonl")).unwrap()
    );

    let o = iacos(&["plot", "--log", path(&run.join("metrics.jsonl")), "--bins", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn ablate_negatives_gives_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dir.path().join("ablation");
    let o = iacos(&[
        "ablate",
        "--suite",
        "negatives",
        "--config",
        path(&dir.path().join("config.toml")),
        "--set",
        "epochs=10",
        "--set",
        "report_epoch=10",
        "--set",
        "save_checkpoints=false",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{text}");
    for (row, name) in rows.iter().zip(["adaptive", "random", "none"]) {
        assert!(row.starts_with(name), "{row}");
    }
    assert!(out.join("ablation.json").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn unknown_suite_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = iacos(&["ablate", "--suite", "dropout", "--config", path(&dir.path().join("config.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown ablation suite"));
}
