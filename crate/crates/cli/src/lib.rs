//! The `iacos` command line.
//!
//! Every verb that writes files also writes a `*.run.toml` snapshot next to
//! them holding the fully resolved invocation (`train` and `ablate` write the
//! resolved training config as `config.toml` instead). Failures print one
//! line to stderr, `error kind=<kind>: <message>`, and exit with status 1;
//! usage errors exit with status 2.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use iacos::config::TrainConfig;
use iacos::corpus::{census, import_acos_tsv, load_canonical, save_canonical, SentimentMap, VocabPolicy};
use iacos::experiment::{curve_from_logs, format_table, read_metric_log, run_ablation};
use iacos::metrics::{evaluate, Evaluation};
use iacos::negatives::NegativesMode;
use iacos::pipeline::{predict_file, read_predictions};
use iacos::trainer::{train, Splits};
use iacos::{checkpoint, Error, Quadruple, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "iacos", version, about = "Aspect-category-opinion-sentiment quadruple extraction")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "verb", rename_all = "lowercase")]
enum Command {
    /// Convert an ACOS tab-separated file to the canonical JSON-lines format.
    Import(ImportArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Score a model or a prediction file against gold data.
    Eval(EvalArgs),
    /// Extract quadruples from text with a trained model.
    Predict(PredictArgs),
    /// Run an ablation grid.
    Ablate(AblateArgs),
    /// Bin learning curves from metric logs.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Serialize)]
struct ImportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Digit-to-sentiment mapping of the source file.
    #[arg(long, default_value = "0:neg,1:neu,2:pos")]
    sentiment_map: String,
    /// Reuse the category list of an existing canonical file.
    #[arg(long)]
    vocab_from: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train only this seed instead of every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    negatives: Option<NegativesMode>,
    /// Run directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override, `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    model: Option<PathBuf>,
    /// A prediction file written by `predict`.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Canonical gold data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    by_type: bool,
    /// Write the scores as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Canonical file or plain text, one sentence per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    /// negatives, implicit, attention or multitask.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct PlotArgs {
    /// `metrics.jsonl` files from runs with the same schedule.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Write the bins as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={}: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Import(a) => import(a, command),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a, command),
        Command::Predict(a) => predict(a, command),
        Command::Ablate(a) => ablate(a),
        Command::Plot(a) => plot(a, command),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `<output>.run.toml` beside `output`.
fn snapshot(output: &Path, command: &Command) -> Result<()> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".run.toml");
    let text = toml::to_string(command).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&output.with_file_name(name), &text)
}

fn import(a: &ImportArgs, command: &Command) -> Result<()> {
    let map: SentimentMap = a.sentiment_map.parse()?;
    let policy = match &a.vocab_from {
        Some(path) => VocabPolicy::Given(load_canonical(path)?.1),
        None => VocabPolicy::Build,
    };
    let (examples, vocab) = import_acos_tsv(&a.input, policy, &map)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_canonical(&examples, &vocab, &a.out)?;
    snapshot(&a.out, command)?;
    let c = census(&examples);
    print!("sentences={} quadruples={} categories={}", c.sentences, c.quadruples, c.categories);
    for (t, n) in &c.by_type {
        print!(" {t}={n}");
    }
    println!();
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let pairs = overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))
        })
        .collect::<Result<Vec<_>>>()?;
    cfg.apply_overrides(&pairs)?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if let Some(mode) = a.negatives {
        cfg.negatives_mode = mode;
    }
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &a.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    let root = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no run directory; pass --out or set output_dir".into()))?;
    let splits = Splits::load(&cfg)?;
    fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    cfg.save(root.join("config.toml"))?;

    let seeds = cfg.seeds.clone();
    for seed in seeds {
        let mut trial = cfg.clone();
        let dir = if cfg.seeds.len() == 1 { root.clone() } else { root.join(format!("seed-{seed}")) };
        trial.output_dir = Some(dir.clone());
        if cfg.seeds.len() > 1 {
            trial.checkpoint_dir = cfg.checkpoint_dir.as_ref().map(|c| c.join(format!("seed-{seed}")));
        }
        let trained = train(&splits, &trial, seed)?;
        let r = &trained.result;
        write_text(&dir.join("trial.json"), &serde_json::to_string_pretty(r)?)?;
        let test_f1 = r.selected_test().map_or("-".to_owned(), |e| format!("{:.4}", e.overall.f1));
        let ckpt = r.best_checkpoint.as_ref().map_or("-".to_owned(), |p| p.display().to_string());
        println!(
            "seed={seed} selected_epoch={} test_f1={test_f1} checkpoint={ckpt}",
            r.selected_epoch
        );
    }
    Ok(())
}

fn remap_by_name(
    quads: &[(Quadruple, f64)],
    from: &iacos::LabelVocab,
    to: &iacos::LabelVocab,
) -> Result<Vec<Quadruple>> {
    quads
        .iter()
        .map(|(q, _)| {
            let name = from.category_name(q.category).unwrap_or_default();
            let category = to
                .category_id(name)
                .ok_or_else(|| Error::Vocab(format!("predicted category {name:?} is not in the gold vocabulary")))?;
            Ok(Quadruple { category, ..*q })
        })
        .collect()
}

fn print_eval(ev: &Evaluation, by_type: bool) {
    let s = &ev.overall;
    println!(
        "P={:.4} R={:.4} F1={:.4} tp={} fp={} fn={}",
        s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
    );
    if by_type {
        for (t, s) in &ev.by_type {
            println!(
                "{t:<6} P={:.4} R={:.4} F1={:.4} tp={} fp={} fn={}",
                s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
            );
        }
    }
}

fn eval(a: &EvalArgs, command: &Command) -> Result<()> {
    let (gold, vocab) = load_canonical(&a.data)?;
    let golds: Vec<Vec<Quadruple>> = gold.iter().map(|e| e.gold.clone()).collect();
    let preds: Vec<Vec<Quadruple>> = match (&a.model, &a.pred) {
        (Some(model), _) => {
            let model = checkpoint::load(model)?;
            let examples = iacos::corpus::remap_categories(&gold, &vocab, &model.vocab)
                .map_err(|e| Error::Vocab(format!("gold data does not fit the model: {e}")))?;
            iacos::pipeline::predict_examples(&model, &examples)?
                .iter()
                .map(|p| remap_by_name(&p.quadruples, &model.vocab, &vocab))
                .collect::<Result<_>>()?
        }
        (None, Some(pred)) => {
            let (sentences, pred_vocab) = read_predictions(pred)?;
            if sentences.len() != gold.len() {
                return Err(Error::Invalid(format!(
                    "{} predicted sentences for {} gold sentences",
                    sentences.len(),
                    gold.len()
                )));
            }
            for (i, (s, g)) in sentences.iter().zip(&gold).enumerate() {
                if s.tokens != g.tokens {
                    return Err(Error::Invalid(format!("sentence {} differs between prediction and gold", i + 1)));
                }
            }
            sentences
                .iter()
                .map(|s| remap_by_name(&s.prediction.quadruples, &pred_vocab, &vocab))
                .collect::<Result<_>>()?
        }
        (None, None) => unreachable!("clap requires --model or --pred"),
    };
    let ev = evaluate(&preds, &golds, &vocab)?;
    print_eval(&ev, a.by_type);
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&ev)?)?;
        snapshot(out, command)?;
    }
    Ok(())
}

fn predict(a: &PredictArgs, command: &Command) -> Result<()> {
    let model = checkpoint::load(&a.model)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let n = predict_file(&model, &a.input, &a.out)?;
    snapshot(&a.out, command)?;
    println!("sentences={n} out={}", a.out.display());
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    if let Some(out) = &a.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    iacos::experiment::suite_variants(&a.suite, &cfg)?;
    let splits = Splits::load(&cfg)?;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        cfg.save(dir.join("config.toml"))?;
    }
    let ablation = run_ablation(&a.suite, &cfg, &splits)?;
    print!("{}", format_table(&ablation));
    Ok(())
}

fn plot(a: &PlotArgs, command: &Command) -> Result<()> {
    let logs = a.logs.iter().map(read_metric_log).collect::<Result<Vec<_>>>()?;
    let bins = curve_from_logs(&logs, &a.split, a.bins);
    println!("first_epoch,last_epoch,mean_f1,std_f1,count");
    for b in &bins {
        println!("{},{},{:.6},{:.6},{}", b.first_epoch, b.last_epoch, b.mean, b.std, b.count);
    }
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&bins)?)?;
        snapshot(out, command)?;
    }
    Ok(())
}
