//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, Model};
use crate::config::RunConfig;
use crate::corpus::{
    generate_synthetic, read_dataset, read_dataset_with_schema, stratified_split, write_dataset, write_mentions,
    write_truth, DatasetFormat, SplitSpec, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, read_rows, score, ReportRow};
use crate::grid::{grid_search, Grid, SearchMode};
use crate::trainer::{first_batch, train, Method};

pub const RESOLVED_CONFIG_FILE: &str = "config.txt";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";
pub const RETRIEVER_FILE: &str = "retriever.ckpt";
pub const SECOND_PREDICTOR_FILE: &str = "predictor2.ckpt";
pub const GRID_TABLE_FILE: &str = "grid.tsv";
pub const BEST_CONFIG_FILE: &str = "best.txt";

#[derive(Debug, Parser)]
#[command(name = "dualre", version, about = "Semi-supervised relation extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known triggers.
    Synth(SynthArgs),
    /// Stratified dev / labeled / unlabeled split of a dataset.
    Split(SplitArgs),
    /// Train one method from a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled file.
    Evaluate(EvaluateArgs),
    /// Dump the first batch a method would promote, as JSON lines.
    Select(SelectArgs),
    /// Search hyperparameters by dev F1.
    Grid(GridArgs),
    /// Merge per-iteration tables into one report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output file; `.json`/`.jsonl` selects TACRED JSON, anything else tabular.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    num_relations: usize,
    #[arg(long, default_value_t = 400)]
    vocab_size: usize,
    #[arg(long, default_value_t = 250)]
    examples_per_relation: usize,
    #[arg(long, default_value_t = 0.15)]
    trigger_noise: f64,
    #[arg(long, default_value_t = 0.25)]
    negative_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving labeled, unlabeled, dev and truth files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    labeled_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    unlabeled_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// One of dualre, dualre-pairwise, self, ensemble, gold, supervised.
    #[arg(long)]
    method: Method,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the manifest's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled file to score against.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    run: RunArgs,
    /// JSON-lines output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Axes as `key = v1, v2, ...` lines.
    #[arg(long)]
    grid: PathBuf,
    /// Search one axis at a time instead of the full product.
    #[arg(long)]
    greedy: bool,
    /// Runs in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Per-iteration CSV files to merge.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the exit
/// status: 0 on success, 1 on a failed command, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dualre: error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Select(a) => select(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve(run: &RunArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        config.train.seed = seed;
    }
    Ok(config)
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = generate_synthetic(&SyntheticConfig {
        num_relations: a.num_relations,
        vocab_size: a.vocab_size,
        examples_per_relation: a.examples_per_relation,
        trigger_noise: a.trigger_noise,
        negative_fraction: a.negative_fraction,
        seed: a.seed,
    })?;
    write_dataset(&a.out, DatasetFormat::from_path(&a.out), &corpus.schema, &corpus.examples)
}

fn split(a: SplitArgs) -> Result<()> {
    let format = DatasetFormat::from_path(&a.input);
    let (schema, data) = read_dataset(&a.input, format)?;
    let parts = stratified_split(
        &data,
        schema.len(),
        &SplitSpec {
            labeled_fraction: a.labeled_fraction,
            unlabeled_fraction: a.unlabeled_fraction,
            dev_fraction: a.dev_fraction,
            seed: a.seed,
        },
    )?;
    create_dir(&a.out)?;
    let ext = match format {
        DatasetFormat::TacredJson => "json",
        DatasetFormat::Tabular => "tsv",
    };
    write_dataset(&a.out.join(format!("labeled.{ext}")), format, &schema, &parts.labeled)?;
    write_dataset(&a.out.join(format!("dev.{ext}")), format, &schema, &parts.dev)?;
    write_mentions(&a.out.join(format!("unlabeled.{ext}")), format, &parts.unlabeled)?;
    write_truth(&a.out.join("truth.tsv"), &schema, &parts.truth)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = resolve(&a.run)?;
    let experiment = config.load_experiment()?;
    let outcome = train(a.run.method, &experiment, &config.train)?;
    create_dir(&a.out)?;
    write_file(&a.out.join(RESOLVED_CONFIG_FILE), &config.render())?;
    let save = |file: &str, model: Model| {
        Checkpoint {
            schema: experiment.schema.clone(),
            vocabulary: outcome.vocabulary.clone(),
            model,
        }
        .save(&a.out.join(file))
    };
    save(PREDICTOR_FILE, Model::Predictor(outcome.predictor.clone()))?;
    if let Some(r) = &outcome.retriever {
        save(RETRIEVER_FILE, Model::Retriever(r.clone()))?;
    }
    if let Some(p) = &outcome.second_predictor {
        save(SECOND_PREDICTOR_FILE, Model::Predictor(p.clone()))?;
    }
    let rows: Vec<ReportRow> = outcome
        .records
        .iter()
        .map(|r| ReportRow::new(a.run.method.name(), config.train.seed, r))
        .collect();
    emit_report(&rows, &a.out)?;
    let last = outcome.records.last().expect("a run records iteration 0");
    println!(
        "{} seed {}: {} iterations, {} promoted, dev F1 {:.4}, test F1 {:.4}",
        a.run.method,
        config.train.seed,
        last.iteration,
        last.n_pseudo,
        last.dev.f1,
        last.test.f1
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let data = read_dataset_with_schema(&a.data, DatasetFormat::from_path(&a.data), &checkpoint.schema)?;
    let mentions: Vec<_> = data.iter().map(|e| e.mention.clone()).collect();
    let gold: Vec<usize> = data.iter().map(|e| e.label).collect();
    let pred = checkpoint.predict_labels(&mentions)?;
    let report = score(&gold, &pred, checkpoint.schema.no_relation_index())?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let config = resolve(&a.run)?;
    let experiment = config.load_experiment()?;
    let batch = first_batch(a.run.method, &experiment, &config.train)?;
    let mut out = String::new();
    for (rank, item) in batch.items.iter().enumerate() {
        let line = serde_json::json!({
            "id": item.id,
            "label": experiment.schema.label(item.label),
            "p": item.p_confidence,
            "q": item.q_score,
            "rank": rank + 1,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    match &a.out {
        Some(path) => write_file(path, &out),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn grid(a: GridArgs) -> Result<()> {
    let config = resolve(&a.run)?;
    let text = fs::read_to_string(&a.grid).map_err(|e| Error::io(&a.grid, e))?;
    let grid = Grid::parse(&text)?;
    let experiment = config.load_experiment()?;
    let mode = if a.greedy { SearchMode::Greedy } else { SearchMode::Full };
    let result = grid_search(&experiment, a.run.method, &config.train, &grid, mode, a.jobs)?;
    create_dir(&a.out)?;
    let table = result.table();
    write_file(&a.out.join(GRID_TABLE_FILE), &table)?;
    let best = RunConfig {
        train: result.config.clone(),
        ..config
    };
    write_file(&a.out.join(BEST_CONFIG_FILE), &best.render())?;
    print!("{table}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.input {
        rows.extend(read_rows(path)?);
    }
    let summary = emit_report(&rows, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["dualre", "frobnicate"]), 2);
        assert_eq!(run(["dualre", "train", "--method", "dualre"]), 2);
        assert_eq!(run(["dualre", "train", "--method", "mystery", "--config", "c", "--out", "o"]), 2);
        assert_eq!(run(["dualre", "evaluate", "--checkpoint", "x", "--data", "y", "--bogus"]), 2);
    }

    #[test]
    fn failing_commands_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.ckpt");
        let m = missing.to_str().unwrap();
        assert_eq!(run(["dualre", "evaluate", "--checkpoint", m, "--data", m]), 1);
    }
}
