//! Command-line harness wiring corpus preparation, embedding training,
//! classifier training, evaluation and reporting into one binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use wrnn::config::{ExperimentConfig, Preset};
use wrnn::corpus::{
    build_vocabulary, encode_all, load_dataset_dir, split_dataset, LengthStats, Vocabulary,
};
use wrnn::embeddings::{
    load_embeddings, save_embeddings, train_skipgram, EmbeddingMatrix, SkipGramConfig,
};
use wrnn::evaluation::{
    aggregate_runs, aggregate_text, compare_models, confusion, metrics, per_class_csv,
    MetricsReport,
};
use wrnn::gradcheck::run_suite;
use wrnn::matrix::{seeded_rng, sub_seed};
use wrnn::models::{ModelParams, ModelSpec};
use wrnn::training::{
    evaluate, load_checkpoint, save_checkpoint, train, Example, TrainConfig,
};
use wrnn::{Error, Result};

#[derive(Parser)]
#[command(name = "wrnn", about = "Neural text classifier with learned positional pooling")]
struct Cli {
    /// Flat key = value config file, applied over built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named settings bundle applied before the config file.
    #[arg(long, global = true)]
    preset: Option<String>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Per-field overrides; flag names equal config-file keys. Flags beat
/// the config file, which beats the preset, which beats defaults.
#[derive(Args)]
struct Overrides {
    #[arg(long = "dataset_dir", alias = "dataset-dir", global = true)]
    dataset_dir: Option<String>,
    #[arg(long = "out_dir", alias = "out-dir", global = true)]
    out_dir: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long = "seq_len", alias = "seq-len", global = true)]
    seq_len: Option<String>,
    #[arg(long = "min_count", alias = "min-count", global = true)]
    min_count: Option<String>,
    #[arg(long = "test_fraction", alias = "test-fraction", global = true)]
    test_fraction: Option<String>,
    #[arg(long = "embed_dim", alias = "embed-dim", global = true)]
    embed_dim: Option<String>,
    #[arg(long = "embeddings_path", alias = "embeddings-path", global = true)]
    embeddings_path: Option<String>,
    #[arg(long = "sg_window", alias = "sg-window", global = true)]
    sg_window: Option<String>,
    #[arg(long = "sg_negatives", alias = "sg-negatives", global = true)]
    sg_negatives: Option<String>,
    #[arg(long = "sg_epochs", alias = "sg-epochs", global = true)]
    sg_epochs: Option<String>,
    #[arg(long = "sg_lr", alias = "sg-lr", global = true)]
    sg_lr: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long = "lstm_hidden", alias = "lstm-hidden", global = true)]
    lstm_hidden: Option<String>,
    #[arg(long = "classifier_hidden", alias = "classifier-hidden", global = true)]
    classifier_hidden: Option<String>,
    #[arg(long = "candidate_act", alias = "candidate-act", global = true)]
    candidate_act: Option<String>,
    #[arg(
        long = "freeze_embeddings",
        alias = "freeze-embeddings",
        global = true,
        action = ArgAction::SetTrue
    )]
    freeze_embeddings: bool,
    #[arg(
        long = "normalize_pool",
        alias = "normalize-pool",
        global = true,
        action = ArgAction::SetTrue
    )]
    normalize_pool: bool,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    minibatch: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long = "clip_norm", alias = "clip-norm", global = true)]
    clip_norm: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true, action = ArgAction::SetTrue)]
    deterministic: bool,
    #[arg(long, global = true)]
    threads: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let pairs: [(&str, &Option<String>); 22] = [
            ("dataset_dir", &self.dataset_dir),
            ("out_dir", &self.out_dir),
            ("theta", &self.theta),
            ("seq_len", &self.seq_len),
            ("min_count", &self.min_count),
            ("test_fraction", &self.test_fraction),
            ("embed_dim", &self.embed_dim),
            ("embeddings_path", &self.embeddings_path),
            ("sg_window", &self.sg_window),
            ("sg_negatives", &self.sg_negatives),
            ("sg_epochs", &self.sg_epochs),
            ("sg_lr", &self.sg_lr),
            ("model", &self.model),
            ("lstm_hidden", &self.lstm_hidden),
            ("classifier_hidden", &self.classifier_hidden),
            ("candidate_act", &self.candidate_act),
            ("lr", &self.lr),
            ("minibatch", &self.minibatch),
            ("epochs", &self.epochs),
            ("lambda", &self.lambda),
            ("clip_norm", &self.clip_norm),
            ("seed", &self.seed),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, v)?;
            }
        }
        if self.freeze_embeddings {
            cfg.freeze_embeddings = true;
        }
        if self.normalize_pool {
            cfg.normalize_pool = true;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(t) = &self.threads {
            cfg.apply("threads", t)?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the dataset, build the vocabulary, choose the sequence
    /// length and write encoded train/test splits.
    Prepare,
    /// Train word vectors on the prepared train split.
    Embed,
    /// Train the configured classifier; writes the best checkpoint and
    /// the full epoch history.
    Train,
    /// Evaluate a checkpoint on an encoded split; writes per-class and
    /// macro metric CSVs.
    Eval {
        /// Checkpoint path; defaults to <out_dir>/<model>.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which encoded split to score.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Validate every analytic gradient against finite differences and
    /// print the worst relative error per component.
    Gradcheck {
        /// Deliberately break one component's result (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Merge macro-metric CSVs into one comparison table.
    Report {
        /// Macro CSV files produced by `eval`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &cli.preset {
        cfg.apply_preset(p.parse::<Preset>()?);
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cli.overrides.apply(&mut cfg)?;
    cfg.validate()?;

    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set thread count: {e}")))?;
    }

    match cli.command {
        Command::Prepare => cmd_prepare(&cfg),
        Command::Embed => cmd_embed(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { checkpoint, split } => cmd_eval(&cfg, checkpoint, &split),
        Command::Gradcheck { corrupt } => cmd_gradcheck(corrupt.as_deref()),
        Command::Report { files } => cmd_report(&cfg, &files),
    }
}

// ---------------------------------------------------------------------------
// artifact paths and formats
// ---------------------------------------------------------------------------

fn vocab_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("vocab.txt")
}

fn split_path(cfg: &ExperimentConfig, split: &str) -> PathBuf {
    cfg.out_dir.join(format!("{split}.ids"))
}

fn meta_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("meta.txt")
}

fn embeddings_out_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("embeddings.txt")
}

fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}.ckpt", cfg.model))
}

/// One example per line: the class label followed by the fixed-length
/// id sequence, space separated.
fn save_split(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.label.to_string());
        for id in &ex.ids {
            out.push(' ');
            out.push_str(&id.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn load_split(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read split {}: {e}", path.display())))?;
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut nums = line.split(' ').map(|s| {
            s.parse::<usize>().map_err(|_| {
                Error::Data(format!("{} line {}: bad number '{s}'", path.display(), lineno + 1))
            })
        });
        let label = nums.next().ok_or_else(|| {
            Error::Data(format!("{} line {}: empty line", path.display(), lineno + 1))
        })??;
        let ids = nums.collect::<Result<Vec<usize>>>()?;
        if ids.is_empty() {
            return Err(Error::Data(format!(
                "{} line {}: example has no tokens",
                path.display(),
                lineno + 1
            )));
        }
        examples.push(Example { ids, label });
    }
    if examples.is_empty() {
        return Err(Error::Data(format!("split {} is empty", path.display())));
    }
    Ok(examples)
}

struct Meta {
    seq_len: usize,
    num_classes: usize,
    classes: Vec<String>,
    vocab_hash: u64,
}

fn save_meta(cfg: &ExperimentConfig, meta: &Meta, theta: f64) -> Result<()> {
    let text = format!(
        "seq_len = {}\ntheta = {}\nnum_classes = {}\nclasses = {}\nvocab_hash = {:016x}\n",
        meta.seq_len,
        theta,
        meta.num_classes,
        meta.classes.join(","),
        meta.vocab_hash,
    );
    fs::write(meta_path(cfg), text)?;
    Ok(())
}

fn load_meta(cfg: &ExperimentConfig) -> Result<Meta> {
    let path = meta_path(cfg);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Data(format!(
            "cannot read {} (run `prepare` first): {e}",
            path.display()
        ))
    })?;
    let mut seq_len = None;
    let mut num_classes = None;
    let mut classes = Vec::new();
    let mut vocab_hash = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "seq_len" => seq_len = value.parse().ok(),
            "num_classes" => num_classes = value.parse().ok(),
            "classes" => classes = value.split(',').map(|s| s.to_string()).collect(),
            "vocab_hash" => vocab_hash = u64::from_str_radix(value, 16).ok(),
            _ => {}
        }
    }
    match (seq_len, num_classes, vocab_hash) {
        (Some(seq_len), Some(num_classes), Some(vocab_hash)) => Ok(Meta {
            seq_len,
            num_classes,
            classes,
            vocab_hash,
        }),
        _ => Err(Error::Data(format!("{} is missing required fields", path.display()))),
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_prepare(cfg: &ExperimentConfig) -> Result<()> {
    let root = cfg
        .dataset_dir
        .as_ref()
        .ok_or_else(|| Error::Config("prepare: dataset_dir is required".into()))?;
    let (mut docs, classes) = load_dataset_dir(root)?;
    let vocab = build_vocabulary(&docs, cfg.min_count)?;

    let lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    let stats = LengthStats::compute(lengths, cfg.theta)?;
    let seq_len = cfg.seq_len.unwrap_or(stats.chosen);

    encode_all(&mut docs, &vocab, seq_len);
    let (train_docs, test_docs) =
        split_dataset(&docs, cfg.test_fraction, sub_seed(cfg.seed, "split"))?;
    let to_examples = |docs: Vec<wrnn::corpus::Document>| -> Vec<Example> {
        docs.into_iter()
            .map(|d| Example { ids: d.ids.unwrap(), label: d.label })
            .collect()
    };

    fs::create_dir_all(&cfg.out_dir)?;
    vocab.save(&vocab_path(cfg))?;
    save_split(&split_path(cfg, "train"), &to_examples(train_docs))?;
    save_split(&split_path(cfg, "test"), &to_examples(test_docs))?;
    fs::write(cfg.out_dir.join("length_histogram.csv"), stats.histogram_csv())?;
    save_meta(
        cfg,
        &Meta {
            seq_len,
            num_classes: classes.len(),
            classes,
            vocab_hash: vocab.content_hash(),
        },
        cfg.theta,
    )?;
    println!(
        "prepared {} documents, vocabulary {}, sequence length {} (theta {})",
        stats.lengths.len(),
        vocab.size(),
        seq_len,
        cfg.theta
    );
    Ok(())
}

fn cmd_embed(cfg: &ExperimentConfig) -> Result<()> {
    let vocab = Vocabulary::load(&vocab_path(cfg))?;
    let train_set = load_split(&split_path(cfg, "train"))?;
    let sequences: Vec<Vec<usize>> = train_set.into_iter().map(|e| e.ids).collect();
    let sg = SkipGramConfig {
        dim: cfg.embed_dim,
        window: cfg.sg_window,
        negatives: cfg.sg_negatives,
        epochs: cfg.sg_epochs,
        lr: cfg.sg_lr,
        seed: sub_seed(cfg.seed, "skip-gram"),
    };
    let (emb, losses) = train_skipgram(&sequences, vocab.size(), &sg)?;
    save_embeddings(&embeddings_out_path(cfg), &emb, &vocab)?;
    for (i, l) in losses.iter().enumerate() {
        println!("embedding epoch {i}: mean loss {l:.4}");
    }
    println!(
        "wrote {} vectors of dimension {} to {}",
        emb.vocab_size(),
        emb.dim(),
        embeddings_out_path(cfg).display()
    );
    Ok(())
}

fn load_or_train_embeddings(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let path = match &cfg.embeddings_path {
        Some(p) => p.clone(),
        None => embeddings_out_path(cfg),
    };
    if !path.is_file() {
        return Err(Error::Data(format!(
            "embeddings file {} not found (run `embed` or set embeddings_path)",
            path.display()
        )));
    }
    let mut emb = load_embeddings(&path, vocab, sub_seed(cfg.seed, "embedding-load"))?;
    if emb.dim() != cfg.embed_dim {
        return Err(Error::Config(format!(
            "embeddings have dimension {}, config says {}",
            emb.dim(),
            cfg.embed_dim
        )));
    }
    emb.trainable = !cfg.freeze_embeddings;
    Ok(emb)
}

fn model_spec(cfg: &ExperimentConfig, meta: &Meta) -> ModelSpec {
    ModelSpec {
        kind: cfg.model,
        seq_len: meta.seq_len,
        embed_dim: cfg.embed_dim,
        lstm_hidden: cfg.lstm_hidden,
        classifier_hidden: cfg.classifier_hidden,
        num_classes: meta.num_classes,
        candidate_act: cfg.candidate_act,
        freeze_embeddings: cfg.freeze_embeddings,
        normalize_pool: cfg.normalize_pool,
    }
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let meta = load_meta(cfg)?;
    let vocab = Vocabulary::load(&vocab_path(cfg))?;
    if vocab.content_hash() != meta.vocab_hash {
        return Err(Error::Data(
            "vocabulary file does not match the prepared dataset".into(),
        ));
    }
    let train_set = load_split(&split_path(cfg, "train"))?;
    let test_set = load_split(&split_path(cfg, "test"))?;
    let emb = load_or_train_embeddings(cfg, &vocab)?;

    let mut rng = seeded_rng(sub_seed(cfg.seed, "model-init"));
    let params = ModelParams::init(model_spec(cfg, &meta), emb, &mut rng)?;
    let tc = TrainConfig {
        lr: cfg.lr,
        minibatch: cfg.minibatch,
        epochs: cfg.epochs,
        lambda: cfg.lambda,
        clip_norm: cfg.clip_norm,
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        ..Default::default()
    };
    let outcome = train(params, &train_set, &test_set, &tc)?;
    for e in &outcome.history.epochs {
        println!(
            "epoch {}: train loss {:.4} acc {:.4} | test loss {:.4} acc {:.4} ({:.1}s)",
            e.epoch, e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy, e.wall_secs
        );
    }

    fs::create_dir_all(&cfg.out_dir)?;
    save_checkpoint(&outcome.best, meta.vocab_hash, &checkpoint_path(cfg))?;
    fs::write(
        cfg.out_dir.join(format!("history-{}.csv", cfg.model)),
        outcome.history.to_csv(),
    )?;
    println!(
        "saved best checkpoint (epoch {}) to {}",
        outcome.best_epoch,
        checkpoint_path(cfg).display()
    );
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>, split: &str) -> Result<()> {
    if split != "train" && split != "test" {
        return Err(Error::Config(format!(
            "unknown split '{split}' (expected train or test)"
        )));
    }
    let meta = load_meta(cfg)?;
    let path = checkpoint.unwrap_or_else(|| checkpoint_path(cfg));
    let params = load_checkpoint(&path, Some(meta.vocab_hash))?;
    let data = load_split(&split_path(cfg, split))?;

    let eval = evaluate(&params, &data)?;
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let m = confusion(&eval.predictions, &labels, meta.num_classes)?;
    let report = metrics(&m, &eval.losses)?;

    let model = params.spec.kind.to_string();
    fs::write(
        cfg.out_dir.join(format!("per-class-{model}.csv")),
        per_class_csv(&model, &report),
    )?;
    let macro_rows = compare_models(vec![(model.clone(), report.clone())]);
    fs::write(cfg.out_dir.join(format!("macro-{model}.csv")), macro_rows.to_csv())?;
    print!("{}", macro_rows.to_text());
    Ok(())
}

fn cmd_gradcheck(corrupt: Option<&str>) -> Result<()> {
    let results = run_suite(corrupt)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<18} worst relative error {:.3e}  {}",
            r.component,
            r.worst_rel_error,
            if r.pass { "ok" } else { "FAIL" }
        );
        if !r.pass {
            failed.push(r.component);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

fn parse_macro_csv(path: &Path) -> Result<Vec<(String, MetricsReport)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!(
                "{} line {}: expected 6 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                Error::Data(format!(
                    "{} line {}: bad number '{}'",
                    path.display(),
                    lineno + 1,
                    fields[i]
                ))
            })
        };
        rows.push((
            fields[0].to_string(),
            MetricsReport {
                per_class: Vec::new(),
                precision_macro: num(1)?,
                recall_macro: num(2)?,
                f1_macro: num(3)?,
                accuracy: num(4)?,
                mean_loss: num(5)?,
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no metric rows", path.display())));
    }
    Ok(rows)
}

fn cmd_report(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for f in files {
        rows.extend(parse_macro_csv(f)?);
    }
    // repeated model names (multi-seed runs) collapse to their mean,
    // with standard deviations shown in the printed table
    let aggs = aggregate_runs(rows);
    let cmp = compare_models(
        aggs.iter()
            .map(|a| (a.model.clone(), a.mean.clone()))
            .collect(),
    );
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("comparison.csv"), cmp.to_csv())?;
    print!("{}", aggregate_text(&aggs));
    Ok(())
}
