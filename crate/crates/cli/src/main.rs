use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use corpusscope::autonet::Optimizer;
use corpusscope::corpus::{apply_label_mapping, load_corpus, Corpus, CorpusFormat, LabelMapping};
use corpusscope::diagnostics::{
    confidence_histogram, exclusivity_report, overlap_curve, ConfidenceHistogram, OverlapMode,
};
use corpusscope::embedding::{load_embedding_text, EmbeddingTable, OovPolicy};
use corpusscope::emomodel::{
    build_model, train, Embeddings, ModelConfig, TrainConfig, TrainedModel, Variant,
};
use corpusscope::evalharness::{
    make_fold_plan, run_cv, run_transfer, CvResult, Experiment, FoldPlan,
};
use corpusscope::seed::derive_seed;
use corpusscope::synthlab::{generate, SynthConfig};
use corpusscope::{Error, ErrorKind, Result};
use serde::Serialize;

mod manifest;

use manifest::OutDir;

#[derive(Parser)]
#[command(name = "corpusscope", version, about = "Dataset-composition diagnostics for text emotion classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus, optionally relabel it, and print its histograms.
    Ingest(IngestArgs),
    /// k-fold cross-validation on one corpus.
    Crossval(CrossvalArgs),
    /// Cross-validate on a source corpus and score every fold model on a target.
    Transfer(TransferArgs),
    /// Train a single model on a whole corpus and save it.
    Train(TrainArgs),
    /// Lexical overlap curve.
    Overlap(OverlapArgs),
    /// Histogram of the probability assigned to the true label.
    Confidence(ConfidenceArgs),
    /// Tokens whose occurrences concentrate in one label.
    Exclusivity(ExclusivityArgs),
    /// Generate a synthetic scripted/improvised corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum VariantArg {
    Word,
    Semantic,
    Fusion,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Word => Variant::Word,
            VariantArg::Semantic => Variant::Semantic,
            VariantArg::Fusion => Variant::Fusion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OovArg {
    Zeros,
    Hashed,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Contiguous,
    Bag,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

fn corpus_format(path: &Path, format: Option<FormatArg>) -> CorpusFormat {
    match format {
        Some(FormatArg::Jsonl) => CorpusFormat::Jsonl,
        Some(FormatArg::Csv) => CorpusFormat::Csv,
        None => CorpusFormat::from_path(path),
    }
}

#[derive(Args, Clone, Serialize)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "word")]
    variant: VariantArg,
    /// Pretrained word vectors (text format). Without it, every token gets a
    /// seeded random vector of --word-dim.
    #[arg(long)]
    word_emb: Option<PathBuf>,
    /// Frozen frame vectors. Without it, frame embeddings are learned.
    #[arg(long)]
    frame_emb: Option<PathBuf>,
    /// Out-of-vocabulary policy for loaded tables.
    #[arg(long, value_enum, default_value = "zeros")]
    oov: OovArg,
    #[arg(long, default_value_t = 300)]
    word_dim: usize,
    #[arg(long, default_value_t = 50)]
    frame_dim: usize,
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    #[arg(long, default_value_t = 150)]
    filters: usize,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
}

#[derive(Args, Clone, Serialize)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel jobs; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Balance labels across folds.
    #[arg(long)]
    stratified: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Relabel rule FROM=TO; repeatable.
    #[arg(long = "map", value_name = "FROM=TO")]
    maps: Vec<String>,
    /// Drop every utterance with this label; repeatable.
    #[arg(long = "drop", value_name = "LABEL")]
    drops: Vec<String>,
    /// Keep labels that no --map or --drop mentions.
    #[arg(long)]
    keep_unmapped: bool,
    /// Write the summary and the (relabelled) corpus here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus for early stopping.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OverlapArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "contiguous")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    /// Only consider utterances carrying this tag.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfidenceArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Score with a saved model. Without it, the corpus is cross-validated
    /// and every utterance is scored by the fold model that did not train
    /// on it.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    bracket_width: f64,
    /// Only count utterances carrying this tag.
    #[arg(long)]
    tag: Option<String>,
    #[command(flatten)]
    model_args: ModelArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExclusivityArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 2)]
    min_occurrences: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value_t = 1000)]
    n_utterances: usize,
    #[arg(long, default_value_t = 4)]
    n_labels: usize,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    min_sentence_len: usize,
    #[arg(long, default_value_t = 14)]
    max_sentence_len: usize,
    #[arg(long, default_value_t = 80)]
    template_count: usize,
    #[arg(long, default_value_t = 0.5)]
    duplication_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    label_signal: f64,
    #[arg(long, default_value_t = 1)]
    paraphrase_noise: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Model and training settings with every default filled in, plus where the
/// embeddings came from.
#[derive(Serialize)]
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    word_table: Option<String>,
    frame_table: Option<String>,
}

struct Tables {
    word: Option<EmbeddingTable>,
    frame: Option<EmbeddingTable>,
}

impl Tables {
    fn embeddings(&self) -> Embeddings<'_> {
        Embeddings {
            word: self.word.as_ref(),
            frame: self.frame.as_ref(),
        }
    }
}

fn resolve(args: &ModelArgs, classes: usize, seed: u64, out: &mut OutDir) -> Result<(Resolved, Tables)> {
    let variant = Variant::from(args.variant);
    let oov = match args.oov {
        OovArg::Zeros => OovPolicy::Zeros,
        OovArg::Hashed => OovPolicy::Hashed {
            seed: derive_seed(seed, "word-oov"),
        },
    };
    let mut word_source = None;
    let word = if !variant.uses_words() {
        None
    } else if let Some(path) = &args.word_emb {
        out.input(path)?;
        let mut table = load_embedding_text(path)?;
        table.oov_policy = oov;
        word_source = Some(format!("file {} ({})", path.display(), table.checksum()));
        Some(table)
    } else {
        let table = EmbeddingTable::empty(
            args.word_dim,
            OovPolicy::Hashed {
                seed: derive_seed(seed, "word-oov"),
            },
        )?;
        word_source = Some(format!("hashed random vectors, dim {}", args.word_dim));
        Some(table)
    };
    let mut frame_source = None;
    let frame = match (&args.frame_emb, variant.uses_frames()) {
        (Some(path), true) => {
            out.input(path)?;
            let table = load_embedding_text(path)?;
            frame_source = Some(format!("file {} ({})", path.display(), table.checksum()));
            Some(table)
        }
        _ => None,
    };
    let model = ModelConfig {
        variant,
        filters: args.filters,
        kernel_size: args.kernel_size,
        dropout: args.dropout,
        hidden: args.hidden,
        classes,
        max_len: args.max_len,
        word_dim: word.as_ref().map_or(args.word_dim, EmbeddingTable::dim),
        frame_dim: frame.as_ref().map_or(args.frame_dim, EmbeddingTable::dim),
        frame_trainable: frame.is_none(),
        ..ModelConfig::default()
    };
    model.validate()?;
    let optimizer = match args.optimizer {
        OptimizerArg::Sgd => Optimizer::Sgd {
            learning_rate: args.learning_rate,
        },
        OptimizerArg::Adam => match Optimizer::default() {
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => Optimizer::Adam {
                learning_rate: args.learning_rate,
                beta1,
                beta2,
                epsilon,
            },
            sgd => sgd,
        },
    };
    let train = TrainConfig {
        optimizer,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        early_stop_patience: args.patience,
    };
    train.validate()?;
    Ok((
        Resolved {
            model,
            train,
            word_table: word_source,
            frame_table: frame_source,
        },
        Tables { word, frame },
    ))
}

fn load(path: &Path, out: &mut OutDir) -> Result<Corpus> {
    out.input(path)?;
    load_corpus(path, CorpusFormat::from_path(path))
}

#[derive(Serialize)]
struct CorpusSummary {
    name: String,
    total: usize,
    classes: BTreeMap<String, usize>,
    tags: BTreeMap<String, usize>,
}

fn summary(c: &Corpus) -> CorpusSummary {
    CorpusSummary {
        name: c.name().to_owned(),
        total: c.len(),
        classes: c.class_histogram(),
        tags: c.tag_histogram(),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus, corpus_format(&args.corpus, args.format))?;
    let corpus = if args.maps.is_empty() && args.drops.is_empty() {
        corpus
    } else {
        let mut rules = BTreeMap::new();
        for m in &args.maps {
            let (from, to) = m
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--map expects FROM=TO, got {m:?}")))?;
            rules.insert(from.to_owned(), to.to_owned());
        }
        if args.keep_unmapped {
            for l in corpus.labels() {
                if !rules.contains_key(l) && !args.drops.contains(l) {
                    rules.insert(l.clone(), l.clone());
                }
            }
        }
        let mapping = LabelMapping::new(rules, args.drops.iter().cloned().collect())?;
        apply_label_mapping(&corpus, &mapping)?
    };
    let s = summary(&corpus);
    let json = serde_json::to_string_pretty(&s)? + "\n";
    print!("{json}");
    if let Some(dir) = &args.out {
        let mut out = OutDir::create(dir, "ingest", None)?;
        out.input(&args.corpus)?;
        out.config(&serde_json::json!({ "map": args.maps, "drop": args.drops, "keep_unmapped": args.keep_unmapped }))?;
        out.write("summary.json", &json)?;
        let mut buf = Vec::new();
        corpus.write_jsonl_to(&mut buf)?;
        out.write(
            &format!("{}.jsonl", corpus.name()),
            &String::from_utf8(buf).expect("serde_json writes UTF-8"),
        )?;
        out.finish()?;
    }
    Ok(())
}

fn predictions_csv(cv: &CvResult) -> String {
    let mut s = String::from("fold,id,label,predicted,target_prob,correct\n");
    for f in &cv.folds {
        for p in &f.test.predictions {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.fold,
                p.id,
                cv.labels[p.target],
                cv.labels[p.predicted()],
                p.target_prob(),
                p.is_correct()
            ));
        }
    }
    s
}

#[derive(Serialize)]
struct ExperimentConfig<'a> {
    #[serde(flatten)]
    resolved: &'a Resolved,
    k: usize,
    stratified: bool,
    workers: usize,
}

fn plan_for(corpus: &Corpus, cv: &CvArgs, seed: u64) -> Result<FoldPlan> {
    make_fold_plan(corpus, cv.k, seed, cv.stratified)
}

fn cmd_crossval(args: CrossvalArgs) -> Result<()> {
    let mut out = OutDir::create(&args.out, "crossval", Some(args.run.seed))?;
    let corpus = load(&args.corpus, &mut out)?;
    let (resolved, tables) = resolve(&args.model, corpus.labels().len(), args.run.seed, &mut out)?;
    out.config(&ExperimentConfig {
        resolved: &resolved,
        k: args.cv.k,
        stratified: args.cv.stratified,
        workers: args.run.workers,
    })?;
    let plan = plan_for(&corpus, &args.cv, args.run.seed)?;
    let exp = Experiment {
        model: &resolved.model,
        train: &resolved.train,
        embeddings: tables.embeddings(),
        workers: args.run.workers,
    };
    let cv = run_cv(&corpus, &plan, &exp)?;
    out.write("cv.json", &cv.to_json()?)?;
    out.write("cv.csv", &cv.to_csv())?;
    out.write("predictions.csv", &predictions_csv(&cv))?;
    out.finish()?;
    println!("{}: {}-fold accuracy {:.2} ± {:.2}", corpus.name(), cv.k, cv.mean, cv.std);
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> Result<()> {
    let mut out = OutDir::create(&args.out, "transfer", Some(args.run.seed))?;
    let source = load(&args.source, &mut out)?;
    let target = load(&args.target, &mut out)?;
    let (resolved, tables) = resolve(&args.model, source.labels().len(), args.run.seed, &mut out)?;
    out.config(&ExperimentConfig {
        resolved: &resolved,
        k: args.cv.k,
        stratified: args.cv.stratified,
        workers: args.run.workers,
    })?;
    let plan = plan_for(&source, &args.cv, args.run.seed)?;
    let exp = Experiment {
        model: &resolved.model,
        train: &resolved.train,
        embeddings: tables.embeddings(),
        workers: args.run.workers,
    };
    let (cv, transfer) = run_transfer(&source, &target, &plan, &exp)?;
    out.write("cv.json", &cv.to_json()?)?;
    out.write("cv.csv", &cv.to_csv())?;
    out.write("transfer.json", &transfer.to_json()?)?;
    out.write("transfer.csv", &transfer.to_csv())?;
    out.finish()?;
    println!(
        "{} cross-validation {:.2} ± {:.2}; on {}: {:.2} ± {:.2}",
        source.name(),
        cv.mean,
        cv.std,
        target.name(),
        transfer.mean,
        transfer.std
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut out = OutDir::create(&args.out, "train", Some(args.seed))?;
    let corpus = load(&args.corpus, &mut out)?;
    let validation = match &args.validation {
        Some(p) => load(p, &mut out)?,
        None => corpus.select(format!("{}/none", corpus.name()), &[]),
    };
    let (resolved, tables) = resolve(&args.model, corpus.labels().len(), args.seed, &mut out)?;
    out.config(&resolved)?;
    let model = build_model(
        &resolved.model,
        corpus.labels(),
        &corpusscope::emomodel::frame_vocabulary(&corpus),
        derive_seed(args.seed, "init"),
    )?;
    let (model, log) = train(model, &corpus, &validation, &tables.embeddings(), &resolved.train)?;
    let mut model_json = serde_json::to_string(&model.to_checkpoint())?;
    model_json.push('\n');
    out.write("model.json", &model_json)?;
    out.write("training.json", &(serde_json::to_string_pretty(&log)? + "\n"))?;
    out.finish()?;
    println!("trained on {} utterances, best epoch {}", corpus.len(), log.best_epoch);
    Ok(())
}

fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn tagged(corpus: Corpus, tag: Option<&str>) -> Corpus {
    match tag {
        Some(t) => corpus.filter_by_tag(t),
        None => corpus,
    }
}

fn cmd_overlap(args: OverlapArgs) -> Result<()> {
    let mut out = OutDir::create(&args.out, "overlap", None)?;
    let corpus = tagged(load(&args.corpus, &mut out)?, args.tag.as_deref());
    let mode = match args.mode {
        ModeArg::Contiguous => OverlapMode::Contiguous,
        ModeArg::Bag => OverlapMode::Bag,
    };
    out.config(&serde_json::json!({
        "mode": mode, "n_min": args.n_min, "n_max": args.n_max, "tag": args.tag,
    }))?;
    let curve = with_workers(args.workers, || overlap_curve(&corpus, args.n_min, args.n_max, mode))??;
    out.write("overlap.csv", &curve.to_csv())?;
    out.write("overlap.dat", &curve.to_gnuplot())?;
    out.finish()
}

fn cmd_confidence(args: ConfidenceArgs) -> Result<()> {
    // Reject a bad width before any training starts.
    ConfidenceHistogram::new(args.bracket_width)?;
    let seed = args.model.is_none().then_some(args.run.seed);
    let mut out = OutDir::create(&args.out, "confidence", seed)?;
    let corpus = load(&args.corpus, &mut out)?;
    let histogram = if let Some(path) = &args.model {
        out.input(path)?;
        let model = TrainedModel::load(path)?;
        let mut margs = args.model_args.clone();
        margs.variant = match model.config().variant {
            Variant::Word => VariantArg::Word,
            Variant::Semantic => VariantArg::Semantic,
            Variant::Fusion => VariantArg::Fusion,
        };
        margs.word_dim = model.config().word_dim;
        let (_, tables) = resolve(&margs, model.labels().len(), args.run.seed, &mut out)?;
        out.config(&serde_json::json!({
            "model": model.config(), "bracket_width": args.bracket_width, "tag": args.tag,
        }))?;
        let scored = tagged(corpus, args.tag.as_deref());
        confidence_histogram(&model, &scored, &tables.embeddings(), args.bracket_width)?
    } else {
        let (resolved, tables) =
            resolve(&args.model_args, corpus.labels().len(), args.run.seed, &mut out)?;
        out.config(&serde_json::json!({
            "experiment": ExperimentConfig {
                resolved: &resolved,
                k: args.cv.k,
                stratified: args.cv.stratified,
                workers: args.run.workers,
            },
            "bracket_width": args.bracket_width,
            "tag": args.tag,
        }))?;
        let plan = plan_for(&corpus, &args.cv, args.run.seed)?;
        let exp = Experiment {
            model: &resolved.model,
            train: &resolved.train,
            embeddings: tables.embeddings(),
            workers: args.run.workers,
        };
        let cv = run_cv(&corpus, &plan, &exp)?;
        let keep: Option<HashSet<&str>> = args.tag.as_deref().map(|t| {
            corpus
                .utterances()
                .iter()
                .filter(|u| u.has_tag(t))
                .map(|u| u.id.as_str())
                .collect()
        });
        ConfidenceHistogram::from_predictions(
            cv.out_of_fold()
                .filter(|p| keep.as_ref().is_none_or(|k| k.contains(p.id.as_str()))),
            args.bracket_width,
        )?
    };
    out.write("confidence.csv", &histogram.to_csv())?;
    out.write("confidence.dat", &histogram.to_gnuplot())?;
    out.finish()?;
    println!(
        "{} utterances, {:.3} in the top bracket",
        histogram.total(),
        histogram.top_bracket_fraction()
    );
    Ok(())
}

fn cmd_exclusivity(args: ExclusivityArgs) -> Result<()> {
    let mut out = OutDir::create(&args.out, "exclusivity", None)?;
    let corpus = load(&args.corpus, &mut out)?;
    out.config(&serde_json::json!({ "min_occurrences": args.min_occurrences }))?;
    let report = exclusivity_report(&corpus, args.min_occurrences)?;
    out.write("exclusivity.csv", &report.to_csv())?;
    out.finish()?;
    if let Some(m) = report.median_exclusivity() {
        println!("{} tokens, median exclusivity {m:.3}", report.tokens.len());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        name: args.name,
        n_utterances: args.n_utterances,
        n_labels: args.n_labels,
        vocab_size: args.vocab_size,
        sentence_len: (args.min_sentence_len, args.max_sentence_len),
        template_count: args.template_count,
        duplication_rate: args.duplication_rate,
        label_signal_strength: args.label_signal,
        paraphrase_noise: args.paraphrase_noise,
        seed: args.seed,
    };
    let corpus = generate(&cfg)?;
    let mut out = OutDir::create(&args.out, "synth", Some(cfg.seed))?;
    out.config(&cfg)?;
    let mut buf = Vec::new();
    corpus.write_jsonl_to(&mut buf)?;
    out.write(
        &format!("{}.jsonl", corpus.name()),
        &String::from_utf8(buf).expect("serde_json writes UTF-8"),
    )?;
    out.finish()
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Precondition => 3,
        ErrorKind::Internal => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORPUSSCOPE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Train(a) => cmd_train(a),
        Command::Overlap(a) => cmd_overlap(a),
        Command::Confidence(a) => cmd_confidence(a),
        Command::Exclusivity(a) => cmd_exclusivity(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
