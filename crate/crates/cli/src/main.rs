use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fragnet::carve::{bench, classify_image, write_jsonl, BenchConfig};
use fragnet::cost::analyze;
use fragnet::data::{
    build_corpus, default_kinds, read_corpus, split, synth_corpus, write_corpus, Corpus,
    GeneratorKind,
};
use fragnet::models::{Architecture, Checkpoint, Model, ModelConfig};
use fragnet::train::{evaluate, group_confusion, train_with, TrainConfig};
use fragnet::{Error, ErrorClass};

/// Light-weight file fragment classification.
#[derive(Parser)]
#[command(name = "fragnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a labeled corpus file.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train a model on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Classify every block of a raw image.
    Classify(ClassifyArgs),
    /// Print the parameter and multiply-accumulate report of an architecture.
    Analyze(AnalyzeArgs),
    /// Measure inference latency and throughput.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        /// Comma-separated generator kinds, one per class (overrides --classes).
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<GeneratorKind>,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 512)]
        frag_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut the files of a directory into labeled fragments.
    Build {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long, default_value_t = 4096)]
        frag_size: usize,
        /// Labeling scenario, 1 to 6.
        #[arg(long, default_value_t = 1)]
        scenario: u8,
        /// Distance between fragment starts; defaults to the fragment size.
        #[arg(long)]
        stride: Option<usize>,
        /// Drop the first block of every file.
        #[arg(long)]
        skip_first: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus; without it the training corpus is split 80/10/10.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value = "dsc")]
    model: Architecture,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Initialize from this checkpoint (it may use another fragment size).
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Where to write the held-out test split when the corpus is split.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Confusion matrix CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Sum a 75-class matrix over the 11 superclasses before writing it.
    #[arg(long)]
    group_by_superclass: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Block size; defaults to the checkpoint's fragment size.
    #[arg(long)]
    frag_size: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// JSON-lines output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, default_value = "dsc")]
    model: Architecture,
    #[arg(long, default_value_t = 4096)]
    frag_size: usize,
    #[arg(long, default_value_t = 75)]
    classes: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Blocks classified for the throughput figure.
    #[arg(long, default_value_t = 10_000)]
    blocks: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Single-block calls timed for the latency figure.
    #[arg(long, default_value_t = 1_000)]
    latency_blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn print_counts(corpus: &Corpus) {
    for (name, n) in corpus.class_names.iter().zip(corpus.class_counts()) {
        println!("{name:>20} {n}");
    }
    println!("{:>20} {}", "total", corpus.len());
}

fn cmd_corpus(cmd: CorpusCmd) -> fragnet::Result<()> {
    match cmd {
        CorpusCmd::Synth { classes, kinds, per_class, frag_size, seed, out } => {
            let kinds = if kinds.is_empty() { default_kinds(classes)? } else { kinds };
            let corpus = synth_corpus(&kinds, per_class, frag_size, seed)?;
            write_corpus(&out, &corpus)?;
            print_counts(&corpus);
        }
        CorpusCmd::Build { input_dir, frag_size, scenario, stride, skip_first, out } => {
            let stride = stride.unwrap_or(frag_size);
            let (corpus, stats) = build_corpus(&input_dir, frag_size, scenario, stride, skip_first)?;
            if corpus.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no {frag_size}-byte fragments found under {}",
                    input_dir.display()
                )));
            }
            write_corpus(&out, &corpus)?;
            print_counts(&corpus);
            println!(
                "files {}  skipped: {} excluded by scenario {scenario}, {} of unknown type",
                stats.files, stats.excluded_files, stats.unknown_files
            );
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> fragnet::Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let (train, val, test) = match &a.val {
        Some(v) => (corpus, read_corpus(v)?, None),
        None => {
            let (tr, va, te) = split(&corpus, [0.8, 0.1, 0.1], a.seed)?;
            (tr, va, Some(te))
        }
    };
    let config = ModelConfig::new(a.model, train.fragment_size, train.num_classes());
    let mut model = Model::<f32>::build(&config, a.seed)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        patience: a.patience,
        pretrained: a.pretrained.clone(),
        ..TrainConfig::default()
    };
    println!(
        "{} on {} training / {} validation fragments of {} bytes, {} params",
        a.model,
        train.len(),
        val.len(),
        train.fragment_size,
        model.num_params()
    );
    let outcome = train_with(&mut model, &train, &val, &tc, |e| {
        println!("epoch {:>3}  train_loss {:.4}  val_acc {:.4}", e.epoch, e.train_loss, e.val_acc);
    })?;
    if let Some(t) = &outcome.transfer {
        println!(
            "initialized {}/{} tensors from a {}-byte checkpoint",
            t.copied.len(),
            t.total,
            t.source_fragment_size
        );
    }
    outcome.checkpoint.write(&a.out)?;
    println!(
        "best epoch {} val_acc {:.4}; wrote {}",
        outcome.history.best_epoch,
        outcome.history.best_val_acc,
        a.out.display()
    );
    if let Some(path) = &a.history {
        outcome.history.write_csv(path)?;
    }
    if let Some(test) = test {
        let ev = evaluate(&model, &test, 64)?;
        println!("test accuracy {:.4} ({} fragments)", ev.accuracy, test.len());
        if let Some(path) = &a.test_out {
            write_corpus(path, &test)?;
        }
    }
    Ok(())
}

/// Loads a checkpoint, optionally re-targeted at another fragment size.
fn load_model(path: &Path, frag_size: Option<usize>) -> fragnet::Result<(Model<f32>, Vec<String>)> {
    let ck = Checkpoint::read(path)?;
    let mut names = ck.manifest.training.as_ref().map(|t| t.class_names.clone()).unwrap_or_default();
    let k = ck.manifest.config.num_classes;
    if names.len() != k {
        names = (0..k).map(|i| format!("class{i}")).collect();
    }
    let expected = frag_size.map(|n| ck.manifest.config.with_fragment_size(n));
    Ok((ck.into_model(expected.as_ref())?, names))
}

fn cmd_eval(a: EvalArgs) -> fragnet::Result<()> {
    let (model, _) = load_model(&a.ckpt, None)?;
    let corpus = read_corpus(&a.corpus)?;
    let ev = evaluate(&model, &corpus, a.batch)?;
    println!("accuracy {:.4} ({} fragments)", ev.accuracy, corpus.len());
    if let Some(path) = &a.confusion {
        if a.group_by_superclass {
            let grouped = group_confusion(&ev.matrix)?;
            grouped.write_csv(path, &fragnet::data::group_names())?;
        } else {
            ev.matrix.write_csv(path, &corpus.class_names)?;
        }
    }
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> fragnet::Result<()> {
    let (model, names) = load_model(&a.ckpt, a.frag_size)?;
    let image = fs::read(&a.image)?;
    let records = classify_image(&model, &image, &names, a.batch)?;
    match &a.out {
        Some(path) => write_jsonl(&records, BufWriter::new(File::create(path)?))?,
        None => write_jsonl(&records, std::io::stdout().lock())?,
    }
    if a.out.is_some() {
        println!("{} blocks classified", records.len());
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> fragnet::Result<()> {
    let config = ModelConfig::new(a.model, a.frag_size, a.classes);
    // every field here comes straight from the flags
    config.validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let report = analyze(&config, a.frag_size);
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> fragnet::Result<()> {
    let (model, _) = load_model(&a.ckpt, None)?;
    let cfg = BenchConfig {
        blocks: a.blocks,
        batch_size: a.batch,
        latency_blocks: a.latency_blocks,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let r = bench(&model, &cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", r.hardware)?;
    writeln!(
        out,
        "latency    {:.3} ms/block mean, p50 {:.3}, p95 {:.3} over {} blocks (batch 1)",
        r.ms_per_block, r.p50_ms, r.p95_ms, r.latency_blocks
    )?;
    writeln!(
        out,
        "throughput {:.3} ms/block over {} blocks at batch {}; {:.2} min/GiB ({} blocks/GiB)",
        r.seconds_per_block * 1e3,
        r.throughput_blocks,
        r.batch_size,
        r.min_per_gib,
        r.blocks_per_gib
    )?;
    Ok(())
}

fn run(cli: Cli) -> fragnet::Result<()> {
    match cli.command {
        Command::Corpus(c) => cmd_corpus(c),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FFC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FFC_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
