//! The `dstkit` command line: corpus preparation, synthetic generation,
//! training, tracking, evaluation, and an interactive tracking session.
//!
//! Exit codes: 0 success, 2 input error, 3 empty result, 4 configuration
//! error. Every artifact-producing command writes a run manifest next to
//! its outputs so a run can be reproduced from the artifact alone.

mod repl;

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::corpus::{self, Corpus, CorpusFormat, SynthConfig};
use crate::evalsuite::{self, EvalReport};
use crate::manifest::RunManifest;
use crate::schema::{load_schema, Schema};
use crate::seq2seq::{
    self, checkpoint, BackendConfig, GoldOracleBackend, Seq2SeqModel, SelfFeedMode, TrainConfig,
    Vocab,
};
use crate::serializer::turn_examples;
use crate::tracker::track_corpus;
use crate::BeliefState;

#[derive(Debug)]
enum CliError {
    /// Unreadable or malformed inputs (exit 2).
    Input(String),
    /// Structurally fine inputs that yield nothing to work on (exit 3).
    Empty(String),
    /// Invalid configuration, reported before any work starts (exit 4).
    Config(Vec<String>),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    fn report(&self) {
        match self {
            CliError::Input(message) | CliError::Empty(message) => {
                eprintln!("error: {message}");
            }
            CliError::Config(messages) => {
                for message in messages {
                    eprintln!("config error: {message}");
                }
            }
        }
    }
}

fn input_err(err: impl std::fmt::Display) -> CliError {
    CliError::Input(err.to_string())
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "dstkit",
    version,
    about = "Self-feeding dialogue state tracking by answering slot questions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert, normalize, and filter a dialogue corpus.
    Prepare(PrepareArgs),
    /// Generate a synthetic corpus (and its schema) for desk-scale runs.
    Synth(SynthArgs),
    /// Train a tracker backend on a corpus.
    Train(TrainArgs),
    /// Run the tracker over a corpus and write per-turn predictions.
    Track(TrackArgs),
    /// Score a prediction file and render the analysis tables.
    Eval(EvalArgs),
    /// Track a dialogue typed live at the terminal.
    Repl(ReplArgs),
}

/// Parses the process arguments, runs the chosen command, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => cmd_prepare(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Track(args) => cmd_track(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Repl(args) => repl::cmd_repl(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            err.report();
            err.code()
        }
    }
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PrepareArgs {
    /// Corpus to read.
    #[arg(long)]
    input: PathBuf,
    /// Input format: "native" or "multiwoz-style".
    #[arg(long, default_value = "native")]
    format: String,
    /// Comma-separated domains to drop (e.g. "hospital,police").
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Optional schema to validate the result against.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Where to write the native-format corpus.
    #[arg(long)]
    output: PathBuf,
}

fn cmd_prepare(args: &PrepareArgs) -> CliResult {
    let format: CorpusFormat = args
        .format
        .parse()
        .map_err(|e| CliError::Config(vec![format!("{e}")]))?;
    let schema = args
        .schema
        .as_deref()
        .map(load_schema)
        .transpose()
        .map_err(input_err)?;
    let corpus = corpus::load_corpus(&args.input, format, schema.as_ref()).map_err(input_err)?;
    let excluded: BTreeSet<String> = args.exclude.iter().map(|d| d.to_lowercase()).collect();
    let corpus = if excluded.is_empty() {
        corpus
    } else {
        corpus.filter_domains(&excluded)
    };
    if corpus.dialogues.is_empty() {
        return Err(CliError::Empty(
            "no dialogues left after domain filtering".to_string(),
        ));
    }
    corpus::save_corpus(&corpus, &args.output).map_err(input_err)?;
    RunManifest::new(
        "prepare",
        json!({ "format": args.format, "exclude": excluded }),
    )
    .with_inputs([&args.input])
    .with_outputs([&args.output])
    .save_beside(&args.output)
    .map_err(input_err)?;
    let slots: BTreeSet<&str> = corpus
        .dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .flat_map(|t| t.gold_belief.slot_ids())
        .collect();
    println!(
        "dialogues: {}  turns: {}  slots: {}",
        corpus.dialogue_count(),
        corpus.turn_count(),
        slots.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    domains: usize,
    #[arg(long, default_value_t = 3)]
    slots_per_domain: usize,
    #[arg(long, default_value_t = 60)]
    value_vocab: usize,
    #[arg(long, default_value_t = 100)]
    dialogues: usize,
    /// Fewest turns a dialogue may have.
    #[arg(long, default_value_t = 1)]
    min_turns: usize,
    #[arg(long, default_value_t = 6)]
    max_turns: usize,
    /// Probability that an implicit-category slot value is paraphrased.
    #[arg(long, default_value_t = 0.1)]
    implicit_rate: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Where to write the corpus.
    #[arg(long)]
    output: PathBuf,
    /// Also write the matching schema here.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let mut problems = Vec::new();
    if args.domains == 0 {
        problems.push("--domains must be at least 1".to_string());
    }
    if args.slots_per_domain == 0 {
        problems.push("--slots-per-domain must be at least 1".to_string());
    }
    if args.dialogues == 0 {
        problems.push("--dialogues must be at least 1".to_string());
    }
    if args.max_turns == 0 {
        problems.push("--max-turns must be at least 1".to_string());
    }
    if args.min_turns > args.max_turns {
        problems.push(format!(
            "--min-turns {} exceeds --max-turns {}",
            args.min_turns, args.max_turns
        ));
    }
    if !(0.0..=1.0).contains(&args.implicit_rate) {
        problems.push("--implicit-rate must be between 0 and 1".to_string());
    }
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    let cfg = SynthConfig {
        domains: args.domains,
        slots_per_domain: args.slots_per_domain,
        value_vocab: args.value_vocab,
        dialogue_count: args.dialogues,
        min_turns: args.min_turns,
        max_turns: args.max_turns,
        implicit_rate: args.implicit_rate,
        seed: args.seed,
    };
    let corpus = corpus::generate_synthetic(&cfg);
    corpus::save_corpus(&corpus, &args.output).map_err(input_err)?;
    let mut outputs = vec![args.output.clone()];
    if let Some(schema_out) = &args.schema_out {
        corpus::synthetic_schema(&cfg)
            .save(schema_out)
            .map_err(input_err)?;
        outputs.push(schema_out.clone());
    }
    RunManifest::new("synth", serde_json::to_value(&cfg).expect("config"))
        .with_outputs(&outputs)
        .save_beside(&args.output)
        .map_err(input_err)?;
    println!(
        "dialogues: {}  turns: {}  schema: {}",
        corpus.dialogue_count(),
        corpus.turn_count(),
        corpus.schema_id
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (native format).
    #[arg(long)]
    corpus: PathBuf,
    /// Slot schema with the question set.
    #[arg(long)]
    schema: PathBuf,
    /// Optional dev corpus; enables per-epoch accuracy and early stopping.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Optional JSON file mirroring the training configuration fields.
    /// Flags override file values; the file overrides defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for checkpoint, training report, and manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Weight of the auxiliary slot-gate loss.
    #[arg(long)]
    aux_weight: Option<f64>,
    /// Previous-belief source during training: online, gold, or none.
    #[arg(long)]
    self_feed: Option<String>,
    /// Train without the auxiliary slot-gate questions.
    #[arg(long)]
    no_aux: bool,
    /// Train on a random fraction of dialogues (0 < f <= 1).
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Decay the learning rate linearly to this value by the last epoch.
    #[arg(long)]
    lr_final: Option<f64>,
    /// Stop after this many epochs without a dev accuracy improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Stop as soon as dev accuracy reaches this value.
    #[arg(long)]
    target_dev_jga: Option<f64>,
    /// Keep only the most recent history tokens of each input.
    #[arg(long)]
    max_history_tokens: Option<usize>,
    // model architecture
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_size: Option<usize>,
    #[arg(long)]
    max_input_len: Option<usize>,
    #[arg(long)]
    max_target_len: Option<usize>,
}

/// On-disk training configuration; every field optional, unknown fields
/// rejected so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfigFile {
    aux_weight: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    lr_final: Option<f64>,
    seed: Option<u64>,
    self_feed: Option<String>,
    include_aux: Option<bool>,
    early_stopping_patience: Option<usize>,
    target_dev_jga: Option<f64>,
    max_history_tokens: Option<usize>,
}

/// Defaults, overlaid by the config file, overlaid by explicit flags. All
/// validation failures are collected and reported together.
fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut problems = Vec::new();
    let file: TrainConfigFile = match &args.config {
        None => TrainConfigFile::default(),
        Some(path) => match std::fs::read_to_string(path) {
            Err(err) => {
                return Err(CliError::Config(vec![format!(
                    "cannot read config file {}: {err}",
                    path.display()
                )]))
            }
            Ok(text) => match serde_json::from_str(&text) {
                Ok(file) => file,
                Err(err) => {
                    return Err(CliError::Config(vec![format!(
                        "config file {}: {err}",
                        path.display()
                    )]))
                }
            },
        },
    };
    let mut cfg = TrainConfig::default();
    // file layer
    if let Some(v) = file.aux_weight {
        cfg.aux_weight = v;
    }
    if let Some(v) = file.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = file.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = file.learning_rate {
        cfg.learning_rate = v;
    }
    if file.lr_final.is_some() {
        cfg.lr_final = file.lr_final;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.include_aux {
        cfg.include_aux = v;
    }
    if file.early_stopping_patience.is_some() {
        cfg.early_stopping_patience = file.early_stopping_patience;
    }
    if file.target_dev_jga.is_some() {
        cfg.target_dev_jga = file.target_dev_jga;
    }
    if file.max_history_tokens.is_some() {
        cfg.max_history_tokens = file.max_history_tokens;
    }
    let mut self_feed_text = file.self_feed;
    // flag layer
    if let Some(v) = args.aux_weight {
        cfg.aux_weight = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if args.lr_final.is_some() {
        cfg.lr_final = args.lr_final;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.no_aux {
        cfg.include_aux = false;
    }
    if args.patience.is_some() {
        cfg.early_stopping_patience = args.patience;
    }
    if args.target_dev_jga.is_some() {
        cfg.target_dev_jga = args.target_dev_jga;
    }
    if args.max_history_tokens.is_some() {
        cfg.max_history_tokens = args.max_history_tokens;
    }
    if args.self_feed.is_some() {
        self_feed_text = args.self_feed.clone();
    }
    if let Some(text) = self_feed_text {
        match text.parse::<SelfFeedMode>() {
            Ok(mode) => cfg.self_feed = mode,
            Err(err) => problems.push(err),
        }
    }
    // validation
    if !cfg.aux_weight.is_finite() || cfg.aux_weight < 0.0 {
        problems.push(format!(
            "aux weight must be a non-negative number, got {}",
            cfg.aux_weight
        ));
    }
    if cfg.epochs == 0 {
        problems.push("epochs must be at least 1".to_string());
    }
    if cfg.batch_size == 0 {
        problems.push("batch size must be at least 1".to_string());
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        problems.push(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        ));
    }
    if let Some(lr_final) = cfg.lr_final {
        if !(lr_final.is_finite() && lr_final > 0.0) {
            problems.push(format!(
                "final learning rate must be positive, got {lr_final}"
            ));
        }
    }
    if let Some(target) = cfg.target_dev_jga {
        if !(0.0..=1.0).contains(&target) {
            problems.push(format!(
                "target dev accuracy must be between 0 and 1, got {target}"
            ));
        }
    }
    if let Some(fraction) = args.fraction {
        if !(fraction > 0.0 && fraction <= 1.0) {
            problems.push(format!(
                "fraction must be in (0, 1], got {fraction}"
            ));
        }
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(problems))
    }
}

fn resolve_backend_config(args: &TrainArgs) -> Result<BackendConfig, CliError> {
    let mut cfg = BackendConfig::default();
    if let Some(v) = args.layers {
        cfg.layers = v;
    }
    if let Some(v) = args.hidden_size {
        cfg.hidden_size = v;
    }
    if let Some(v) = args.heads {
        cfg.heads = v;
    }
    if let Some(v) = args.ffn_size {
        cfg.ffn_size = v;
    }
    if let Some(v) = args.max_input_len {
        cfg.max_input_len = v;
    }
    if let Some(v) = args.max_target_len {
        cfg.max_target_len = v;
    }
    let mut problems = Vec::new();
    if cfg.layers == 0 {
        problems.push("layers must be at least 1".to_string());
    }
    if cfg.heads == 0 || cfg.hidden_size == 0 || cfg.hidden_size % cfg.heads != 0 {
        problems.push(format!(
            "hidden size {} must be a positive multiple of heads {}",
            cfg.hidden_size, cfg.heads
        ));
    } else if (cfg.hidden_size / cfg.heads) % 2 != 0 {
        problems.push(format!(
            "head dimension {} must be even",
            cfg.hidden_size / cfg.heads
        ));
    }
    if cfg.ffn_size == 0 {
        problems.push("ffn size must be at least 1".to_string());
    }
    if cfg.max_input_len == 0 || cfg.max_target_len < 2 {
        problems.push("sequence length limits are too small".to_string());
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(problems))
    }
}

/// Vocabulary from every training example the corpus can produce (main and
/// auxiliary, gold-fed): decoded predictions can only ever contain tokens
/// that already appear here.
fn training_vocab(corpus: &Corpus, schema: &Schema, cfg: &TrainConfig) -> Vocab {
    let mut texts: Vec<String> = Vec::new();
    for dialogue in &corpus.dialogues {
        let mut prev = BeliefState::new();
        for pos in 0..dialogue.turns.len() {
            for example in turn_examples(dialogue, pos, &prev, schema, true, cfg.max_history_tokens)
            {
                texts.push(example.input_text);
                texts.push(example.target_text);
            }
            prev = dialogue.turns[pos].gold_belief.clone();
        }
    }
    Vocab::build(texts.iter().map(String::as_str))
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let cfg = resolve_train_config(args)?;
    let model_cfg = resolve_backend_config(args)?;
    let schema = load_schema(&args.schema).map_err(input_err)?;
    let full = corpus::load_corpus(&args.corpus, CorpusFormat::Native, Some(&schema))
        .map_err(input_err)?;
    let dev = args
        .dev
        .as_deref()
        .map(|path| corpus::load_corpus(path, CorpusFormat::Native, Some(&schema)))
        .transpose()
        .map_err(input_err)?;
    let train_corpus = match args.fraction {
        None => full,
        Some(fraction) => full.sample_fewshot(fraction, cfg.seed).map_err(input_err)?,
    };

    let vocab = training_vocab(&train_corpus, &schema, &cfg);
    let mut model = Seq2SeqModel::new(model_cfg, vocab, cfg.seed);
    println!(
        "training on {} dialogues ({} turns), {} parameters",
        train_corpus.dialogue_count(),
        train_corpus.turn_count(),
        model.n_params()
    );
    let report = seq2seq::train(&mut model, &train_corpus, dev.as_ref(), &schema, &cfg);

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|err| input_err(format!("cannot create {}: {err}", args.out_dir.display())))?;
    let checkpoint_path = args.out_dir.join("checkpoint.json");
    checkpoint::save_checkpoint(&model, &train_corpus.schema_id, &checkpoint_path)
        .map_err(input_err)?;
    let report_path = args.out_dir.join("train_report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serialization"),
    )
    .map_err(input_err)?;
    let manifest_config = json!({
        "train": {
            "aux_weight": cfg.aux_weight,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "lr_final": cfg.lr_final,
            "seed": cfg.seed,
            "self_feed": cfg.self_feed,
            "include_aux": cfg.include_aux,
            "early_stopping_patience": cfg.early_stopping_patience,
            "target_dev_jga": cfg.target_dev_jga,
            "max_history_tokens": cfg.max_history_tokens,
        },
        "model": model_cfg,
        "fraction": args.fraction,
        "sampled_dialogue_ids": train_corpus.dialogue_ids(),
        "schema_id": train_corpus.schema_id,
    });
    let mut inputs = vec![args.corpus.clone(), args.schema.clone()];
    if let Some(dev_path) = &args.dev {
        inputs.push(dev_path.clone());
    }
    RunManifest::new("train", manifest_config)
        .with_inputs(&inputs)
        .with_outputs([&checkpoint_path, &report_path])
        .save(&args.out_dir.join("manifest.json"))
        .map_err(input_err)?;

    let last_loss = report.steps.last().map(|s| s.total);
    println!(
        "epochs: {}  steps: {}  final loss: {}",
        report.epochs_run,
        report.steps.len(),
        last_loss.map_or("-".to_string(), |l| format!("{l:.4}")),
    );
    if !report.dev_jga.is_empty() {
        let formatted: Vec<String> = report.dev_jga.iter().map(|j| format!("{j:.4}")).collect();
        println!("dev jga by epoch: {}", formatted.join(" "));
    }
    println!("stop: {:?}", report.stop);
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrackArgs {
    /// Corpus to track (native format).
    #[arg(long)]
    corpus: PathBuf,
    /// Slot schema with the question set.
    #[arg(long)]
    schema: PathBuf,
    /// Trained checkpoint; required for the model backend.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// "model" (default) or "oracle" (answers from the corpus gold labels).
    #[arg(long, default_value = "model")]
    backend: String,
    /// Worker threads for dialogue fan-out; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Keep only the most recent history tokens of each input.
    #[arg(long)]
    max_history_tokens: Option<usize>,
    /// Where to write the per-turn prediction records (JSON lines).
    #[arg(long)]
    output: PathBuf,
}

fn cmd_track(args: &TrackArgs) -> CliResult {
    let schema = load_schema(&args.schema).map_err(input_err)?;
    let corpus = corpus::load_corpus(&args.corpus, CorpusFormat::Native, Some(&schema))
        .map_err(input_err)?;
    let records = match args.backend.as_str() {
        "model" => {
            let checkpoint_path = args.checkpoint.as_deref().ok_or_else(|| {
                CliError::Config(vec![
                    "--checkpoint is required with the model backend".to_string()
                ])
            })?;
            let (model, ckpt_schema_id) =
                checkpoint::load_checkpoint(checkpoint_path).map_err(input_err)?;
            if ckpt_schema_id != corpus.schema_id {
                return Err(CliError::Input(format!(
                    "schema mismatch: checkpoint was trained for {:?}, corpus is {:?}",
                    ckpt_schema_id, corpus.schema_id
                )));
            }
            track_corpus(&model, &corpus, &schema, args.max_history_tokens, args.parallel)
        }
        "oracle" => {
            let oracle = GoldOracleBackend::from_corpus(&corpus, &schema, args.max_history_tokens);
            if oracle.conflicts() > 0 {
                eprintln!(
                    "warning: {} oracle conflicts (same input, different gold answers)",
                    oracle.conflicts()
                );
            }
            let records =
                track_corpus(&oracle, &corpus, &schema, args.max_history_tokens, args.parallel);
            if oracle.misses() > 0 {
                eprintln!("warning: {} oracle misses (unseen inputs)", oracle.misses());
            }
            records
        }
        other => {
            return Err(CliError::Config(vec![format!(
                "unknown backend {other:?} (expected \"model\" or \"oracle\")"
            )]))
        }
    };
    if records.is_empty() {
        return Err(CliError::Empty("corpus produced no turns to track".to_string()));
    }
    evalsuite::save_records(&records, &args.output).map_err(input_err)?;
    let mut inputs = vec![args.corpus.clone(), args.schema.clone()];
    if let Some(checkpoint_path) = &args.checkpoint {
        inputs.push(checkpoint_path.clone());
    }
    RunManifest::new(
        "track",
        json!({
            "backend": args.backend,
            "parallel": args.parallel,
            "max_history_tokens": args.max_history_tokens,
            "schema_id": corpus.schema_id,
        }),
    )
    .with_inputs(&inputs)
    .with_outputs([&args.output])
    .save_beside(&args.output)
    .map_err(input_err)?;
    println!("records: {}  output: {}", records.len(), args.output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Prediction records to score (JSON lines).
    #[arg(long)]
    records: PathBuf,
    /// Slot schema with domains and categories.
    #[arg(long)]
    schema: PathBuf,
    /// Print per-domain accuracy.
    #[arg(long)]
    domains: bool,
    /// Print accuracy by dialogue depth.
    #[arg(long)]
    bins: bool,
    /// Print the wrong/ignore/spurious breakdown.
    #[arg(long)]
    errors: bool,
    /// Print accuracy by slot category.
    #[arg(long)]
    slot_types: bool,
    /// Baseline records to compare against; deltas are this run minus the
    /// baseline, in percentage points.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    let schema = load_schema(&args.schema).map_err(input_err)?;
    let records = evalsuite::load_records(&args.records).map_err(input_err)?;
    let report = EvalReport::from_records(&records, &schema)
        .map_err(|err| CliError::Empty(err.to_string()))?;

    let sections = [args.domains, args.bins, args.errors, args.slot_types];
    if sections.iter().all(|on| !on) {
        print!("{}", report.render());
    } else {
        print!("{}", report.render_summary());
        if args.domains {
            print!("{}", report.render_domains());
        }
        if args.bins {
            print!("{}", report.render_bins());
        }
        if args.errors {
            print!("{}", report.render_errors());
        }
        if args.slot_types {
            print!("{}", report.render_slot_types());
        }
    }

    if let Some(compare_path) = &args.compare {
        let baseline_records = evalsuite::load_records(compare_path).map_err(input_err)?;
        let baseline = EvalReport::from_records(&baseline_records, &schema)
            .map_err(|err| CliError::Empty(err.to_string()))?;
        let comparison = evalsuite::compare_runs(&baseline, &report);
        println!("comparison vs {}:", compare_path.display());
        print!("{}", comparison.render());
    }

    if let Some(report_out) = &args.report_out {
        evalsuite::save_report(&report, report_out).map_err(input_err)?;
        RunManifest::new("eval", json!({ "compare": args.compare }))
            .with_inputs([&args.records])
            .with_outputs([report_out])
            .save_beside(report_out)
            .map_err(input_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// repl
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReplArgs {
    /// Trained checkpoint to converse with.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Slot schema with the question set.
    #[arg(long)]
    schema: PathBuf,
    /// Keep only the most recent history tokens of each input.
    #[arg(long)]
    max_history_tokens: Option<usize>,
}
