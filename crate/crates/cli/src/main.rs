//! Command-line workflows: corpus statistics, training, prediction,
//! evaluation, and gradient checking. Every run writes a manifest with the
//! resolved configuration and content hashes of its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use triex_core::config::{file_fingerprint, ExperimentConfig};
use triex_core::data::{compute_stats, parse_dataset, parse_file, CorpusStats, Split};
use triex_core::eval::{score, EvalReport};
use triex_core::gradcheck::run_grad_check;
use triex_core::records::{
    read_predictions, render_predictions, to_predictions_map, SentenceRecord,
};
use triex_core::train::{train, Checkpoint, TrainOutcome};

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "triex",
    version,
    about = "Span-level bidirectional sentiment triplet extraction"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration file (TOML). Flags override file values,
    /// file values override defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pin the deterministic single-threaded mode.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "triex-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics for a dataset file or split directory.
    Stats {
        /// Dataset file, or a directory holding <split>_triplets.txt.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Train a model and keep the checkpoint with the best dev F1.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
    },
    /// Extract triplets for every sentence of a dataset file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a prediction file against a gold dataset file.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Compare analytic gradients against central finite differences.
    GradCheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Staged output files, committed all-or-nothing.
struct Artifacts {
    out_dir: PathBuf,
    staged: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new(out_dir: &Path) -> Artifacts {
        Artifacts {
            out_dir: out_dir.to_path_buf(),
            staged: Vec::new(),
        }
    }

    fn stage(&mut self, name: &str, bytes: Vec<u8>) {
        self.staged.push((name.to_string(), bytes));
    }

    fn names(&self) -> Vec<String> {
        self.staged.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Write every staged file via a temporary name. If anything fails, the
    /// files already committed in this run are removed again.
    fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut committed: Vec<PathBuf> = Vec::new();
        for (name, bytes) in &self.staged {
            let path = self.out_dir.join(name);
            let tmp = self.out_dir.join(format!("{name}.tmp"));
            let result = fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, &path));
            if let Err(e) = result {
                let _ = fs::remove_file(&tmp);
                for done in &committed {
                    let _ = fs::remove_file(done);
                }
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
            committed.push(path);
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    subcommand: String,
    seed: u64,
    deterministic: bool,
    config: ExperimentConfig,
    /// Input path -> content hash.
    inputs: BTreeMap<String, String>,
    artifacts: Vec<String>,
}

/// Paths that do not exist as given are retried under `TRIEX_DATA_DIR`.
fn resolve_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    if let Ok(root) = std::env::var("TRIEX_DATA_DIR") {
        let candidate = Path::new(&root).join(path);
        if candidate.exists() {
            return candidate;
        }
    }
    path.to_path_buf()
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if global.deterministic {
        config.deterministic = true;
    }
    config.validate()?;
    Ok(config)
}

fn hash_input(inputs: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
    let digest =
        file_fingerprint(path).with_context(|| format!("hashing {}", path.display()))?;
    inputs.insert(path.display().to_string(), digest);
    Ok(())
}

fn print_stats_table(label: &str, stats: &CorpusStats) {
    println!(
        "{:<40} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "", "#S", "POS", "NEU", "NEG", "#SW", "#MW"
    );
    println!(
        "{:<40} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        label,
        stats.num_sentences,
        stats.pos,
        stats.neu,
        stats.neg,
        stats.single_word,
        stats.multi_word
    );
    println!();
    println!("num_sentences {}", stats.num_sentences);
    println!("pos {}", stats.pos);
    println!("neu {}", stats.neu);
    println!("neg {}", stats.neg);
    println!("single_word {}", stats.single_word);
    println!("multi_word {}", stats.multi_word);
}

fn print_eval_report(report: &EvalReport) {
    println!("{:<18} {:>9} {:>9} {:>9}", "", "P", "R", "F1");
    println!(
        "{:<18} {:>9.4} {:>9.4} {:>9.4}",
        "triplets", report.precision, report.recall, report.f1
    );
    println!();
    println!("precision {:.6}", report.precision);
    println!("recall {:.6}", report.recall);
    println!("f1 {:.6}", report.f1);
    println!("num_predicted {}", report.triplet.predicted);
    println!("num_gold {}", report.triplet.gold);
    println!("num_correct {}", report.triplet.correct);
    for (name, breakdown) in [
        ("aspect", &report.aspect_terms),
        ("opinion", &report.opinion_terms),
    ] {
        for (len, counts) in &breakdown.by_length {
            println!(
                "{name}_len_{len} precision {:.6} recall {:.6} f1 {:.6}",
                counts.precision(),
                counts.recall(),
                counts.f1()
            );
        }
        if breakdown.four_plus.gold > 0 || breakdown.four_plus.predicted > 0 {
            println!(
                "{name}_len_ge4 precision {:.6} recall {:.6} f1 {:.6}",
                breakdown.four_plus.precision(),
                breakdown.four_plus.recall(),
                breakdown.four_plus.f1()
            );
        }
    }
    for (bucket, counts) in &report.by_triplet_count {
        println!("triplet_count_{bucket} f1 {:.6}", counts.f1());
    }
}

fn cmd_stats(
    data: &Path,
    split: Split,
    artifacts: &mut Artifacts,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let data = resolve_path(data);
    let sentences = if data.is_dir() {
        parse_dataset(&data, split)?
    } else {
        parse_file(&data)?
    };
    hash_input(inputs, &data)?;
    let stats = compute_stats(&sentences);
    print_stats_table(&data.display().to_string(), &stats);
    artifacts.stage("stats.json", serde_json::to_vec_pretty(&stats)?);
    Ok(())
}

fn cmd_train(
    config: &ExperimentConfig,
    train_path: &Path,
    dev_path: &Path,
    artifacts: &mut Artifacts,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let train_path = resolve_path(train_path);
    let dev_path = resolve_path(dev_path);
    let train_set = parse_file(&train_path)?;
    let dev_set = parse_file(&dev_path)?;
    hash_input(inputs, &train_path)?;
    hash_input(inputs, &dev_path)?;

    let TrainOutcome { best, log } = train(config, &train_set, &dev_set)?;
    println!(
        "trained {} epochs; best dev F1 {:.4} at epoch {}",
        log.len(),
        best.dev_f1,
        best.epoch
    );

    let mut metrics = String::new();
    for record in &log {
        metrics.push_str(&serde_json::to_string(record)?);
        metrics.push('\n');
    }
    artifacts.stage("metrics.jsonl", metrics.into_bytes());
    artifacts.stage("checkpoint.json", serde_json::to_vec(&best)?);
    Ok(())
}

fn cmd_predict(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    data: &Path,
    artifacts: &mut Artifacts,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let checkpoint_path = resolve_path(checkpoint_path);
    let data = resolve_path(data);
    let checkpoint = Checkpoint::load(&checkpoint_path)?;
    hash_input(inputs, &checkpoint_path)?;
    hash_input(inputs, &data)?;
    let model = checkpoint.into_model(config.clone())?;
    let sentences = parse_file(&data)?;

    let mut records = Vec::with_capacity(sentences.len());
    let mut total = 0usize;
    for sentence in &sentences {
        let triplets = model.predict_sentence(sentence)?;
        total += triplets.len();
        records.push(SentenceRecord::new(&sentence.id, &triplets));
    }
    println!(
        "predicted {} triplets over {} sentences",
        total,
        sentences.len()
    );
    artifacts.stage(
        "predictions.jsonl",
        render_predictions(&records)?.into_bytes(),
    );
    Ok(())
}

fn cmd_eval(
    gold: &Path,
    pred: &Path,
    artifacts: &mut Artifacts,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let gold = resolve_path(gold);
    let pred = resolve_path(pred);
    let sentences = parse_file(&gold)?;
    let records = read_predictions(&pred)?;
    hash_input(inputs, &gold)?;
    hash_input(inputs, &pred)?;
    let predictions = to_predictions_map(&records);
    let report = score(&predictions, &sentences)?;
    print_eval_report(&report);
    artifacts.stage("report.json", serde_json::to_vec_pretty(&report)?);
    Ok(())
}

fn cmd_grad_check(config: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<()> {
    let report = run_grad_check(config.seed)?;
    println!("{report}");
    artifacts.stage("gradcheck.txt", format!("{report}\n").into_bytes());
    if !report.passes(GRAD_CHECK_TOLERANCE) {
        bail!(
            "gradient check failed: max relative error {:.3e} exceeds {GRAD_CHECK_TOLERANCE:.0e}",
            report.max()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.global)?;
    let mut artifacts = Artifacts::new(&cli.global.out);
    let mut inputs = BTreeMap::new();

    let subcommand = match &cli.command {
        Command::Stats { data, split } => {
            cmd_stats(data, (*split).into(), &mut artifacts, &mut inputs)?;
            "stats"
        }
        Command::Train { train, dev } => {
            cmd_train(&config, train, dev, &mut artifacts, &mut inputs)?;
            "train"
        }
        Command::Predict { checkpoint, data } => {
            cmd_predict(&config, checkpoint, data, &mut artifacts, &mut inputs)?;
            "predict"
        }
        Command::Eval { gold, pred } => {
            cmd_eval(gold, pred, &mut artifacts, &mut inputs)?;
            "eval"
        }
        Command::GradCheck => {
            cmd_grad_check(&config, &mut artifacts)?;
            "grad-check"
        }
    };

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: subcommand.to_string(),
        seed: config.seed,
        deterministic: config.deterministic,
        config,
        inputs,
        artifacts: artifacts.names(),
    };
    artifacts.stage("manifest.json", serde_json::to_vec_pretty(&manifest)?);
    artifacts.commit()
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
