//! `aan`: synthetic cohorts, simulated margin-vs-random comparisons,
//! feature-importance reports and the annotation server.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aan_core::active_loop::{RetrainPolicy, Strategy};
use aan_core::dataset::{
    generate_synthetic_cohort, read_case_file, serialize_cases, synthetic_embedding_store,
    CohortSpec,
};
use aan_core::experiment::{
    export_results, labels_to_reach, make_splits, run_comparison, run_repeat, ExperimentConfig,
    SplitSpec,
};
use aan_core::featurizer::{EmbeddingStore, FallbackPolicy, EMBED_DIM};
use aan_core::importance::{cohort_feature_report, compare_models, ImportanceOptions};
use aan_core::network::{GateKind, ModelConfig, OptimizerKind};

#[derive(Parser)]
#[command(name = "aan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort and a matching embedding file.
    Synth(SynthArgs),
    /// Run the paired margin-vs-random comparison and export its results.
    Simulate(SimulateArgs),
    /// Rank gated features per case after one simulated repeat.
    Importance(ImportanceArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    size: usize,
    /// Fraction of High-risk cases.
    #[arg(long, default_value_t = 0.5)]
    balance: f64,
    /// 18 cases with 4 High per 9, overriding --size and --balance.
    #[arg(long)]
    compact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// How tightly each class's event embeddings cluster.
    #[arg(long, default_value_t = 1.0)]
    cluster_strength: f64,
    #[arg(long)]
    cases_out: PathBuf,
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Line-delimited case file.
    #[arg(long)]
    cases: PathBuf,
    /// Embedding file, or `hash` for hashed embeddings only.
    #[arg(long, default_value = "hash")]
    embeddings: String,
    /// Policy for event text missing from the embedding file.
    #[arg(long, value_parser = parse_fallback, default_value = "error")]
    fallback: FallbackPolicy,
    #[arg(long, default_value_t = 0)]
    projection_seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_gate, default_value = "full")]
    gate: GateKind,
    #[arg(long, default_value_t = 64)]
    hidden1: usize,
    #[arg(long, default_value_t = 32)]
    hidden2: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, value_parser = parse_optimizer, default_value = "adam")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
    #[arg(long, value_parser = parse_retrain, default_value = "warm")]
    retrain: RetrainPolicy,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 5)]
    n_test: usize,
    #[arg(long, default_value_t = 4)]
    n_train: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_value = "margin,random")]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 3)]
    smoothing_window: usize,
    #[command(flatten)]
    model: ModelArgs,
    /// Output directory for the results CSV and curve file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportanceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Which repeat's split to run.
    #[arg(long, default_value_t = 0)]
    repeat: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Rank `a ⊙ x` instead of its magnitude.
    #[arg(long)]
    signed: bool,
    /// Keep only the first occurrence of each name.
    #[arg(long)]
    dedup: bool,
    #[command(flatten)]
    model: ModelArgs,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory holding one subdirectory per session.
    #[arg(long, default_value = "sessions")]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn parse_fallback(s: &str) -> Result<FallbackPolicy, String> {
    match s {
        "error" => Ok(FallbackPolicy::Error),
        "hash" => Ok(FallbackPolicy::Hash),
        _ => Err(format!("expected error or hash, got {s}")),
    }
}

fn parse_gate(s: &str) -> Result<GateKind, String> {
    match s {
        "full" => Ok(GateKind::Full),
        "diagonal" => Ok(GateKind::Diagonal),
        _ => Err(format!("expected full or diagonal, got {s}")),
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("expected adam or sgd, got {s}")),
    }
}

fn parse_retrain(s: &str) -> Result<RetrainPolicy, String> {
    match s {
        "warm" => Ok(RetrainPolicy::Warm),
        "cold" => Ok(RetrainPolicy::Cold),
        _ => Err(format!("expected warm or cold, got {s}")),
    }
}

impl DataArgs {
    fn store(&self) -> Result<EmbeddingStore> {
        if self.embeddings == "hash" {
            return Ok(EmbeddingStore::hashed(EMBED_DIM));
        }
        EmbeddingStore::load(&self.embeddings, self.fallback)
            .with_context(|| format!("loading embeddings from {}", self.embeddings))
    }
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            dropout_rate: self.dropout,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.model_seed,
            gate: self.gate,
            ..ModelConfig::default()
        }
    }
}

fn experiment_config(
    data: &DataArgs,
    split: &SplitArgs,
    model: &ModelArgs,
    repeats: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        split: SplitSpec {
            n_test: split.n_test,
            n_train: split.n_train,
            n_repeats: repeats,
            seed: split.seed,
        },
        model: model.config(),
        retrain: model.retrain,
        projection_seed: data.projection_seed,
        ..ExperimentConfig::default()
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = if args.compact {
        CohortSpec::compact()
    } else {
        CohortSpec {
            size: args.size,
            balance: args.balance,
            ..CohortSpec::default()
        }
    };
    let cohort = generate_synthetic_cohort(&spec, args.seed)?;
    std::fs::write(&args.cases_out, serialize_cases(&cohort))
        .with_context(|| format!("writing {}", args.cases_out.display()))?;
    if let Some(path) = &args.embeddings_out {
        let store = synthetic_embedding_store(&spec, args.seed, args.cluster_strength);
        let mut out = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        store.write_to(&mut out)?;
        out.flush()?;
    }
    eprintln!(
        "wrote {} cases to {}",
        cohort.len(),
        args.cases_out.display()
    );
    Ok(())
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cohort = read_case_file(&args.data.cases)
        .with_context(|| format!("reading {}", args.data.cases.display()))?;
    let store = args.data.store()?;
    let cfg = ExperimentConfig {
        strategies: args.strategies.clone(),
        smoothing_window: args.smoothing_window,
        ..experiment_config(&args.data, &args.split, &args.model, args.repeats)
    };
    let result = run_comparison(&cohort, &store, &cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let (csv, curves) = export_results(&result, &args.out)?;
    for &s in &args.strategies {
        let budgets: Vec<usize> = result
            .curves_for(s)
            .filter_map(|c| labels_to_reach(c, 0.9))
            .collect();
        let reached = budgets.len();
        eprintln!(
            "{:>6}: reached 90% test accuracy in {reached}/{} repeats, median {} labels",
            s.as_str(),
            args.repeats,
            median(budgets)
        );
    }
    eprintln!("wrote {} and {}", csv.display(), curves.display());
    Ok(())
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn importance(args: ImportanceArgs) -> Result<()> {
    let cohort = read_case_file(&args.data.cases)
        .with_context(|| format!("reading {}", args.data.cases.display()))?;
    let store = args.data.store()?;
    let cfg = experiment_config(&args.data, &args.split, &args.model, args.repeat + 1);
    let Some(split) = make_splits(&cohort, &cfg.split)?
        .into_iter()
        .nth(args.repeat)
    else {
        bail!("no repeat {}", args.repeat);
    };
    let outcome = run_repeat(&cohort, &store, &cfg, args.repeat, split)?;
    let options = ImportanceOptions {
        signed: args.signed,
        dedup: args.dedup,
    };
    let model = |s: Strategy| {
        outcome
            .traces
            .iter()
            .find(|(t, _)| *t == s)
            .map(|(_, trace)| &trace.model)
            .expect("both strategies run")
    };
    let (margin, random) = (model(Strategy::Margin), model(Strategy::Random));
    let report = serde_json::json!({
        "repeat": args.repeat,
        "k": args.k,
        "margin": cohort_feature_report(margin, &outcome.featurizer, &cohort, args.k, options)?,
        "random": cohort_feature_report(random, &outcome.featurizer, &cohort, args.k, options)?,
        "comparison": compare_models(
            (margin, &outcome.featurizer),
            (random, &outcome.featurizer),
            &cohort,
            args.k,
            options,
        )?,
    });
    write_json(args.out.as_deref(), &report)
}

fn serve(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        eprintln!(
            "serving sessions from {} on {}",
            args.root.display(),
            args.addr
        );
        aan_service::serve(listener, aan_service::AppState::new(args.root)).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Simulate(a) => simulate(a),
        Command::Importance(a) => importance(a),
        Command::Serve(a) => serve(a),
    }
}
