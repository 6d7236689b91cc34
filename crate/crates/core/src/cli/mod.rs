//! Command-line surface: `gen-data`, `train`, `evaluate`, `predict`, and
//! `compare` bind the library modules into reproducible batch runs.
//!
//! Flag precedence is CLI > `--config` JSON > `CONVTAG_SEED` (seeds only)
//! > built-in defaults. Exit codes: 0 success, 1 runtime failure, 2 usage
//! error. Every command writes a `manifest.json` into its output directory.

mod manifest;

use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::corpus::{self, CaseMode, LabelVocab, SplitSpec, SyntheticSpec};
use crate::metrics;
use crate::model::{self, ArchKind, ClassifierModel, ModelConfig};
use crate::tokenizer::{self, TokenizerVocab};
use crate::trainer::{self, TrainConfig, TrainHistory};

pub use manifest::RunManifest;

/// CLI failures split by exit code: usage errors (2) for operator mistakes,
/// runtime errors (1) for everything that breaks mid-run.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}
runtime_from!(
    corpus::CorpusError,
    tokenizer::TokenizerError,
    model::ModelError,
    trainer::TrainError,
    metrics::MetricsError,
    std::io::Error,
);

#[derive(Parser, Debug)]
#[command(
    name = "convtag",
    version,
    about = "Train and evaluate small transformer classifiers for tagging short conversational sentences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus plus distribution stats
    GenData(GenDataArgs),
    /// Split a corpus, build/load a vocabulary, and train a classifier
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test TSV
    Evaluate(EvaluateArgs),
    /// Tag sentences with a trained checkpoint (JSON lines on stdout)
    Predict(PredictArgs),
    /// Merge history files into one long-format CSV for plotting
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Output directory for artifacts and the run manifest
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON file whose keys override unset flags (CLI still wins)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of label classes
    #[arg(long)]
    classes: Option<usize>,
    /// Total sentence count
    #[arg(long)]
    total: Option<usize>,
    /// Zipf-like imbalance exponent over class supports (0 = uniform)
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    min_words: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus TSV (header `text<TAB>label`)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// encoder (bidirectional, CLS pooling) or decoder (causal, last-token)
    #[arg(long)]
    arch: Option<ArchKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Master seed (model init, shuffle, dropout)
    #[arg(long)]
    seed: Option<u64>,
    /// Train/test split seed (defaults to --seed)
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Disable per-class stratification of the split
    #[arg(long)]
    no_stratify: bool,
    /// cased or uncased preprocessing
    #[arg(long)]
    case: Option<CaseMode>,
    /// Reuse an existing vocabulary file
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Build the vocabulary from the train split
    #[arg(long)]
    build_vocab: bool,
    #[arg(long)]
    vocab_cap: Option<usize>,
    /// Model size preset: desk, bert-like, gpt2-like
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// FFN width (defaults to 4 x hidden)
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Depth preset: halve the layer count (6-layer analog of a 12-layer base)
    #[arg(long)]
    distil: bool,
    /// Also write checkpoint_epoch<N>.ctag every N epochs
    #[arg(long, value_name = "N")]
    save_every: Option<usize>,
    /// Record wall_seconds as 0.0 so identical runs emit identical files
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Label list written by train (one label per line, id order)
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Test TSV to score
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    #[arg(long)]
    case: Option<CaseMode>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long)]
    case: Option<CaseMode>,
    /// Sentence to tag (repeatable)
    #[arg(long)]
    text: Vec<String>,
    /// Read sentences from stdin, one per line
    #[arg(long)]
    stdin_lines: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// history.csv files to merge
    #[arg(long, num_args = 1.., value_name = "FILE")]
    histories: Vec<PathBuf>,
    /// Comma-separated model names (defaults to the file paths)
    #[arg(long, value_delimiter = ',')]
    names: Option<Vec<String>>,
}

/// Parsed `--config` JSON object.
struct ConfigMap(serde_json::Map<String, serde_json::Value>);

impl ConfigMap {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigMap(serde_json::Map::new()));
        };
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        match serde_json::from_str(&content) {
            Ok(serde_json::Value::Object(map)) => Ok(ConfigMap(map)),
            Ok(_) => Err(CliError::Usage(format!(
                "--config {}: expected a JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::Usage(format!("--config {}: {e}", path.display()))),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(value) => serde_json::from_value(value.clone())
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
        }
    }

    fn get_flag(&self, key: &str) -> Result<bool, CliError> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    fn get_case(&self, key: &str) -> Result<Option<CaseMode>, CliError> {
        self.get::<String>(key)?
            .map(|s| s.parse())
            .transpose()
            .map_err(CliError::Usage)
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("CONVTAG_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("CONVTAG_SEED is not a valid u64: '{s}'"))),
        Err(_) => Ok(None),
    }
}

fn require_file(path: &Path, flag: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--{flag} {}: file not found",
            path.display()
        )))
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn out_dir(common: &CommonArgs, cfg: &ConfigMap) -> Result<PathBuf, CliError> {
    let out: PathBuf = required(common.out.clone().or(cfg.get("out")?), "out")?;
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            2
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            1
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let cfg = ConfigMap::load(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &cfg)?;
    let spec = SyntheticSpec {
        num_classes: args.classes.or(cfg.get("classes")?).unwrap_or(46),
        total_sentences: args.total.or(cfg.get("total")?).unwrap_or(4600),
        imbalance_exponent: args.skew.or(cfg.get("skew")?).unwrap_or(1.0),
        min_words: args.min_words.or(cfg.get("min_words")?).unwrap_or(2),
        max_words: args.max_words.or(cfg.get("max_words")?).unwrap_or(30),
        seed: args.seed.or(cfg.get("seed")?).or(env_seed()?).unwrap_or(0),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut manifest = RunManifest::start("gen-data");
    manifest.flag("classes", spec.num_classes);
    manifest.flag("total", spec.total_sentences);
    manifest.flag("skew", spec.imbalance_exponent);
    manifest.flag("min_words", spec.min_words);
    manifest.flag("max_words", spec.max_words);
    manifest.flag("out", out.display().to_string());
    manifest.seed("seed", spec.seed);

    let records = corpus::generate_synthetic(&spec)?;
    let stats = corpus::corpus_stats(&records)?;
    std::fs::write(out.join("corpus.tsv"), corpus::to_tsv(&records))?;
    std::fs::write(out.join("lengths.csv"), stats.lengths_csv())?;
    std::fs::write(out.join("labels.csv"), stats.labels_csv())?;
    manifest.finish(&out)?;
    println!(
        "wrote {} records over {} labels to {}",
        records.len(),
        stats.labels.len(),
        out.join("corpus.tsv").display()
    );
    Ok(())
}

struct ResolvedTrain {
    corpus: PathBuf,
    arch: ArchKind,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
    split_seed: u64,
    train_fraction: f64,
    stratified: bool,
    case: CaseMode,
    vocab_path: Option<PathBuf>,
    build_vocab: bool,
    vocab_cap: usize,
    preset: Option<String>,
    hidden: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    ffn: Option<usize>,
    max_seq_len: Option<usize>,
    dropout: Option<f64>,
    distil: bool,
    save_every: Option<usize>,
    record_timing: bool,
}

fn resolve_train(args: &TrainArgs, cfg: &ConfigMap) -> Result<ResolvedTrain, CliError> {
    let seed = args.seed.or(cfg.get("seed")?).or(env_seed()?).unwrap_or(0);
    let arch = match args.arch {
        Some(a) => a,
        None => cfg
            .get::<String>("arch")?
            .map(|s| s.parse())
            .transpose()
            .map_err(CliError::Usage)?
            .unwrap_or(ArchKind::Encoder),
    };
    Ok(ResolvedTrain {
        corpus: required(args.corpus.clone().or(cfg.get("corpus")?), "corpus")?,
        arch,
        epochs: args.epochs.or(cfg.get("epochs")?).unwrap_or(3),
        batch_size: args.batch_size.or(cfg.get("batch_size")?).unwrap_or(16),
        lr: args.lr.or(cfg.get("lr")?).unwrap_or(1e-3),
        weight_decay: args
            .weight_decay
            .or(cfg.get("weight_decay")?)
            .unwrap_or(0.0),
        split_seed: args.split_seed.or(cfg.get("split_seed")?).unwrap_or(seed),
        seed,
        train_fraction: args
            .train_fraction
            .or(cfg.get("train_fraction")?)
            .unwrap_or(0.7),
        stratified: !(args.no_stratify || cfg.get_flag("no_stratify")?),
        case: args.case.or(cfg.get_case("case")?).unwrap_or_default(),
        vocab_path: args.vocab.clone().or(cfg.get("vocab")?),
        build_vocab: args.build_vocab || cfg.get_flag("build_vocab")?,
        vocab_cap: args.vocab_cap.or(cfg.get("vocab_cap")?).unwrap_or(2000),
        preset: args.preset.clone().or(cfg.get("preset")?),
        hidden: args.hidden.or(cfg.get("hidden")?),
        layers: args.layers.or(cfg.get("layers")?),
        heads: args.heads.or(cfg.get("heads")?),
        ffn: args.ffn.or(cfg.get("ffn")?),
        max_seq_len: args.max_seq_len.or(cfg.get("max_seq_len")?),
        dropout: args.dropout.or(cfg.get("dropout")?),
        distil: args.distil || cfg.get_flag("distil")?,
        save_every: args.save_every.or(cfg.get("save_every")?),
        record_timing: !(args.no_timing || cfg.get_flag("no_timing")?),
    })
}

/// Preset base, explicit flags on top, then the distil depth preset. Vocab
/// size and class count come from the data.
fn build_model_config(
    r: &ResolvedTrain,
    vocab_size: usize,
    num_classes: usize,
) -> Result<ModelConfig, CliError> {
    let mut config = match r.preset.as_deref() {
        None | Some("desk") => ModelConfig::desk(r.arch),
        Some("bert-like") => ModelConfig::bert_base_like(),
        Some("gpt2-like") => ModelConfig::gpt2_like(),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown preset '{other}' (expected desk|bert-like|gpt2-like)"
            )))
        }
    };
    config.arch = r.arch;
    if let Some(h) = r.hidden {
        config.hidden_size = h;
        config.ffn_size = 4 * h;
    }
    if let Some(l) = r.layers {
        config.num_layers = l;
    }
    if let Some(h) = r.heads {
        config.num_heads = h;
    }
    if let Some(f) = r.ffn {
        config.ffn_size = f;
    }
    if let Some(t) = r.max_seq_len {
        config.max_seq_len = t;
    }
    if let Some(d) = r.dropout {
        config.dropout = d;
    }
    if r.distil {
        config.num_layers = (config.num_layers / 2).max(1);
    }
    config.vocab_size = vocab_size;
    config.num_classes = num_classes;
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn encode_set(
    records: &[corpus::LabeledSentence],
    vocab: &TokenizerVocab,
    labels: &LabelVocab,
    config: &ModelConfig,
) -> Result<Vec<tokenizer::EncodedExample>, CliError> {
    records
        .iter()
        .map(|r| {
            let mut ex = tokenizer::encode(&r.text, vocab, config.max_seq_len, config.arch)?;
            ex.label_id = labels
                .id(&r.label)
                .ok_or_else(|| CliError::Runtime(format!("label '{}' not in label set", r.label)))?
                as u32;
            Ok(ex)
        })
        .collect()
}

fn write_labels(path: &Path, labels: &LabelVocab) -> Result<(), CliError> {
    let mut content = String::new();
    for name in labels.names() {
        content.push_str(name);
        content.push('\n');
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn load_labels(path: &Path) -> Result<LabelVocab, CliError> {
    let content = std::fs::read_to_string(path)?;
    LabelVocab::from_labels(content.lines().filter(|l| !l.is_empty()))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = ConfigMap::load(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &cfg)?;
    let r = resolve_train(&args, &cfg)?;
    require_file(&r.corpus, "corpus")?;
    if r.vocab_path.is_none() && !r.build_vocab {
        return Err(CliError::Usage(
            "pass --vocab <file> to reuse a vocabulary or --build-vocab to build one from the train split"
                .to_string(),
        ));
    }
    if let Some(path) = &r.vocab_path {
        require_file(path, "vocab")?;
    }

    let mut manifest = RunManifest::start("train");
    manifest.input(&r.corpus)?;
    manifest.seed("seed", r.seed);
    manifest.seed("split_seed", r.split_seed);
    manifest.flag("corpus", r.corpus.display().to_string());
    manifest.flag("arch", r.arch.to_string());
    manifest.flag("epochs", r.epochs);
    manifest.flag("batch_size", r.batch_size);
    manifest.flag("lr", r.lr);
    manifest.flag("weight_decay", r.weight_decay);
    manifest.flag("train_fraction", r.train_fraction);
    manifest.flag("stratified", r.stratified);
    manifest.flag("case", r.case.to_string());
    manifest.flag("vocab_cap", r.vocab_cap);
    manifest.flag("build_vocab", r.build_vocab);
    manifest.flag("distil", r.distil);
    manifest.flag("record_timing", r.record_timing);
    manifest.flag("out", out.display().to_string());

    let loaded = corpus::load_corpus(&r.corpus, r.case)?;
    if loaded.dropped > 0 {
        println!("dropped {} rows that normalized to empty", loaded.dropped);
    }
    let split_spec = SplitSpec {
        train_fraction: r.train_fraction,
        seed: r.split_seed,
        stratified: r.stratified,
    };
    let (train_records, test_records) = corpus::split_dataset(loaded.records, &split_spec)?;

    let vocab = match &r.vocab_path {
        Some(path) => {
            manifest.input(path)?;
            TokenizerVocab::load(path)?
        }
        None => {
            let vocab = tokenizer::build_vocab(&train_records, r.vocab_cap)?;
            vocab.save(&out.join("vocab.txt"))?;
            vocab
        }
    };
    let labels = loaded.label_vocab;
    let config = build_model_config(&r, vocab.size(), labels.len())?;
    manifest.flag("model_config", &config);

    let train_set = encode_set(&train_records, &vocab, &labels, &config)?;
    let test_set = encode_set(&test_records, &vocab, &labels, &config)?;
    println!(
        "training {} ({} parameters) on {} train / {} test sentences",
        config.arch,
        model::count_parameters(&config),
        train_set.len(),
        test_set.len()
    );

    let mut classifier = ClassifierModel::init(config, vocab.content_hash(), r.seed)?;
    let train_cfg = TrainConfig {
        epochs: r.epochs,
        batch_size: r.batch_size,
        learning_rate: r.lr,
        weight_decay: r.weight_decay,
        seed: r.seed,
        record_timing: r.record_timing,
        ..TrainConfig::default()
    };
    let save_every = r.save_every;
    let out_for_hook = out.clone();
    let history = trainer::train_with(
        &mut classifier,
        &train_set,
        &test_set,
        &train_cfg,
        |model, record| {
            println!(
                "epoch {}: train_loss {:.4} train_acc {:.4} test_loss {:.4} test_acc {:.4}",
                record.epoch,
                record.train_loss,
                record.train_accuracy,
                record.test_loss,
                record.test_accuracy
            );
            if let Some(every) = save_every {
                if every > 0 && record.epoch % every == 0 {
                    let path = out_for_hook.join(format!("checkpoint_epoch{}.ctag", record.epoch));
                    model::save_checkpoint(model, &path).map_err(trainer::TrainError::Model)?;
                }
            }
            Ok(())
        },
    )?;

    model::save_checkpoint(&classifier, &out.join("checkpoint.ctag"))?;
    write_labels(&out.join("labels.txt"), &labels)?;
    std::fs::write(out.join("train.tsv"), corpus::to_tsv(&train_records))?;
    std::fs::write(out.join("test.tsv"), corpus::to_tsv(&test_records))?;
    std::fs::write(out.join("history.csv"), history.to_csv())?;
    manifest.finish(&out)?;

    if let Some(epoch) = trainer::detect_overfit(&history, 2) {
        println!("overfitting detected at epoch {epoch} (test loss rising while train loss falls)");
    }
    println!("wrote checkpoint and history to {}", out.display());
    Ok(())
}

struct EvalInputs {
    model: ClassifierModel,
    vocab: TokenizerVocab,
    labels: LabelVocab,
    case: CaseMode,
}

fn load_eval_inputs(
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
    labels: Option<PathBuf>,
    case: Option<CaseMode>,
    cfg: &ConfigMap,
    manifest: &mut RunManifest,
) -> Result<EvalInputs, CliError> {
    let checkpoint: PathBuf = required(checkpoint.or(cfg.get("checkpoint")?), "checkpoint")?;
    let vocab_path: PathBuf = required(vocab.or(cfg.get("vocab")?), "vocab")?;
    let labels_path: PathBuf = required(labels.or(cfg.get("labels")?), "labels")?;
    require_file(&checkpoint, "checkpoint")?;
    require_file(&vocab_path, "vocab")?;
    require_file(&labels_path, "labels")?;
    manifest.input(&checkpoint)?;
    manifest.input(&vocab_path)?;
    manifest.input(&labels_path)?;
    manifest.flag("checkpoint", checkpoint.display().to_string());
    manifest.flag("vocab", vocab_path.display().to_string());
    manifest.flag("labels", labels_path.display().to_string());

    let model = model::load_checkpoint(&checkpoint)?;
    let vocab = TokenizerVocab::load(&vocab_path)?;
    model.verify_vocab(&vocab)?;
    let labels = load_labels(&labels_path)?;
    if labels.len() != model.config().num_classes {
        return Err(CliError::Runtime(format!(
            "label file has {} labels but the checkpoint expects {}",
            labels.len(),
            model.config().num_classes
        )));
    }
    let case = case.or(cfg.get_case("case")?).unwrap_or_default();
    manifest.flag("case", case.to_string());
    Ok(EvalInputs {
        model,
        vocab,
        labels,
        case,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = ConfigMap::load(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &cfg)?;
    let mut manifest = RunManifest::start("evaluate");
    let inputs = load_eval_inputs(
        args.checkpoint,
        args.vocab,
        args.labels,
        args.case,
        &cfg,
        &mut manifest,
    )?;
    let test_path: PathBuf = required(args.test.or(cfg.get("test")?), "test")?;
    require_file(&test_path, "test")?;
    manifest.input(&test_path)?;
    manifest.flag("test", test_path.display().to_string());
    let batch_size = args.batch_size.or(cfg.get("batch_size")?).unwrap_or(64);
    manifest.flag("batch_size", batch_size);
    manifest.flag("out", out.display().to_string());

    let loaded = corpus::load_corpus(&test_path, inputs.case)?;
    let mut golds = Vec::with_capacity(loaded.records.len());
    for record in &loaded.records {
        let id = inputs.labels.id(&record.label).ok_or_else(|| {
            CliError::Runtime(format!(
                "test label '{}' does not appear in the label file",
                record.label
            ))
        })?;
        golds.push(id as u32);
    }
    let examples = encode_set(
        &loaded.records,
        &inputs.vocab,
        &inputs.labels,
        inputs.model.config(),
    )?;
    let (loss, preds) = trainer::evaluate_split(&inputs.model, &examples, batch_size)?;
    let report = metrics::evaluate(&preds, &golds, &inputs.labels)?;

    std::fs::write(out.join("report.json"), report.to_json())?;
    std::fs::write(
        out.join("confusion.csv"),
        report.matrix.to_csv(&inputs.labels),
    )?;
    manifest.finish(&out)?;
    println!(
        "evaluated {} sentences: accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4}, loss {:.4}",
        examples.len(),
        report.overall_accuracy,
        report.weighted_f1,
        report.macro_f1,
        loss
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg = ConfigMap::load(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &cfg)?;
    let mut manifest = RunManifest::start("predict");
    let inputs = load_eval_inputs(
        args.checkpoint,
        args.vocab,
        args.labels,
        args.case,
        &cfg,
        &mut manifest,
    )?;
    let stdin_lines = args.stdin_lines || cfg.get_flag("stdin_lines")?;
    let mut texts: Vec<String> = args.text;
    if texts.is_empty() {
        texts = cfg.get("text")?.unwrap_or_default();
    }
    if stdin_lines {
        for line in std::io::stdin().lock().lines() {
            texts.push(line?);
        }
    }
    if texts.is_empty() {
        return Err(CliError::Usage(
            "no input: pass --text at least once or --stdin-lines".to_string(),
        ));
    }
    manifest.flag("stdin_lines", stdin_lines);
    manifest.flag("line_count", texts.len());
    manifest.flag("out", out.display().to_string());

    let mut lines = String::new();
    for text in &texts {
        let json = match model::predict(
            &inputs.model,
            text,
            inputs.case,
            &inputs.vocab,
            &inputs.labels,
        ) {
            Ok(pred) => serde_json::json!({
                "text": text,
                "label": pred.label,
                "probs": pred.probs,
            }),
            Err(model::ModelError::EmptyInput) => serde_json::json!({
                "text": text,
                "error": "empty_after_normalization",
            }),
            Err(other) => return Err(other.into()),
        };
        let line = serde_json::to_string(&json).expect("prediction serializes");
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    std::fs::write(out.join("predictions.jsonl"), lines)?;
    manifest.finish(&out)?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let cfg = ConfigMap::load(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &cfg)?;
    let mut histories = args.histories;
    if histories.is_empty() {
        histories = cfg.get("histories")?.unwrap_or_default();
    }
    if histories.is_empty() {
        return Err(CliError::Usage(
            "pass --histories with at least one history.csv".to_string(),
        ));
    }
    let names: Option<Vec<String>> = match args.names {
        Some(n) => Some(n),
        None => cfg.get("names")?,
    };
    if let Some(names) = &names {
        if names.len() != histories.len() {
            return Err(CliError::Usage(format!(
                "--names lists {} names for {} history files",
                names.len(),
                histories.len()
            )));
        }
    }
    for path in &histories {
        require_file(path, "histories")?;
    }

    let mut manifest = RunManifest::start("compare");
    for path in &histories {
        manifest.input(path)?;
    }
    manifest.flag(
        "histories",
        histories
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>(),
    );
    manifest.flag("out", out.display().to_string());

    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(["model", "epoch", "split", "metric", "value"])
        .expect("in-memory csv");
    let mut rows = 0usize;
    for (i, path) in histories.iter().enumerate() {
        let content = std::fs::read_to_string(path)?;
        let history = TrainHistory::from_csv(&content)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let model_name = names
            .as_ref()
            .map(|n| n[i].clone())
            .unwrap_or_else(|| path.display().to_string());
        for record in &history.records {
            let cells = [
                ("train", "loss", record.train_loss),
                ("train", "accuracy", record.train_accuracy),
                ("test", "loss", record.test_loss),
                ("test", "accuracy", record.test_accuracy),
            ];
            for (split, metric, value) in cells {
                wtr.write_record([
                    model_name.as_str(),
                    &record.epoch.to_string(),
                    split,
                    metric,
                    &value.to_string(),
                ])
                .expect("in-memory csv");
                rows += 1;
            }
        }
    }
    let csv_bytes = wtr.into_inner().expect("in-memory csv");
    std::fs::write(out.join("compare.csv"), &csv_bytes)?;
    manifest.finish(&out)?;
    println!("wrote {rows} curve rows to {}", out.join("compare.csv").display());
    Ok(())
}
