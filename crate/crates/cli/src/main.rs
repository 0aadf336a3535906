//! `neurotype` — the command-line front end for the cell-typing pipeline:
//! `ingest` raw feature tables, `train` a model, `eval` a checkpoint, and
//! `synth` benchmark data with known ground truth.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure,
//! 2 usage or validation error.

mod manifest;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use neurotype::checkpoint::Checkpoint;
use neurotype::config::{ModelKind, TrainConfig};
use neurotype::data::synth::{synth_blobs, synth_shifted_domains, BlobsSpec, ShiftSpec, ShiftTruth};
use neurotype::data::table::{load_table, save_table};
use neurotype::data::{
    apply_normalize, fit_normalize, group_cre_lines, strata_keys, stratified_split, CreMapping,
    DataError, Dataset, DendriteMap, FeatureSchema, NormStats, Organism, SplitSpec, StratifyBy,
    Subclass, FEATURE_COUNT,
};
use neurotype::eval::{
    binary_scores, macro_scores, render_reports, BinarySummary, ConfusionMatrix, EvalReport,
};
use neurotype::train::{train, TrainError, TrainedModel};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "neurotype", version, about = "Neuron-type classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, group, split, and normalize a raw feature table.
    Ingest(IngestArgs),
    /// Train a model on an ingested data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature table.
    Eval(EvalArgs),
    /// Generate synthetic benchmark data with a ground-truth sidecar.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw CSV with metadata columns and the feature panel.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Custom feature list (one name per line); default is the standard
    /// 41-feature panel.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Group cre lines into subclasses using this mapping file.
    #[arg(long)]
    cre_map: Option<PathBuf>,
    /// Group cre lines using the built-in default mapping.
    #[arg(long)]
    group_cre: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split fractions train/validation/test.
    #[arg(long, default_value = "0.8/0.1/0.1")]
    splits: String,
    /// Exact split counts train/validation/test; overrides --splits.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long, value_enum, default_value_t = StratifyArg::None)]
    stratify_by: StratifyArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory produced by `neurotype ingest`.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature table to evaluate; expected in model space already unless
    /// --raw is given.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Apply the checkpoint's normalization to raw features first.
    #[arg(long)]
    raw: bool,
    /// Also write the clustered per-sample gate matrix (LSPIN only).
    #[arg(long)]
    export_gates: bool,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blobs: total samples.
    #[arg(long, default_value_t = 600)]
    n: usize,
    /// Blobs: number of classes (1..=5).
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Blobs: informative feature count.
    #[arg(long, default_value_t = 5)]
    d_informative: usize,
    /// Blobs: pure-noise feature count.
    #[arg(long, default_value_t = 36)]
    d_noise: usize,
    /// Shift: samples per domain.
    #[arg(long, default_value_t = 500)]
    n_source: usize,
    #[arg(long, default_value_t = 500)]
    n_target: usize,
    /// Shift: feature count.
    #[arg(long, default_value_t = 41)]
    d: usize,
    /// Shift: covariate shift strength; 0 means identical domains.
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Class separation of the generators.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Dann,
    Lspin,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Blobs,
    Shift,
}

#[derive(Clone, Copy, ValueEnum)]
enum StratifyArg {
    None,
    Subclass,
    Broad,
    Organism,
    OrganismBroad,
    OrganismSubclass,
}

impl From<StratifyArg> for StratifyBy {
    fn from(arg: StratifyArg) -> Self {
        match arg {
            StratifyArg::None => StratifyBy::None,
            StratifyArg::Subclass => StratifyBy::Subclass,
            StratifyArg::Broad => StratifyBy::Broad,
            StratifyArg::Organism => StratifyBy::Organism,
            StratifyArg::OrganismBroad => StratifyBy::OrganismAndBroad,
            StratifyArg::OrganismSubclass => StratifyBy::OrganismAndSubclass,
        }
    }
}

/// Marker for validation-class failures; `main` maps it to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.to_string()))
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        let code = if err.downcast_ref::<UsageError>().is_some() {
            2
        } else {
            1
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let started = Instant::now();
    let out_dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("could not create {}", out_dir.display()))?;

    let schema = load_schema(args.schema.as_deref())?;
    let mut dataset = load_table(&args.input, &schema).map_err(usage)?;
    println!("loaded {} samples from {}", dataset.len(), args.input.display());

    let mut run = RunManifest::new(
        "ingest",
        args.seed,
        serde_json::json!({
            "input": args.input.display().to_string(),
            "schema": args.schema.as_ref().map(|p| p.display().to_string()),
            "cre_map": args.cre_map.as_ref().map(|p| p.display().to_string()),
            "group_cre": args.group_cre,
            "splits": args.splits,
            "counts": args.counts,
            "stratify_by": format!("{:?}", StratifyBy::from(args.stratify_by)),
        }),
    );
    run.add_input(&args.input)?;

    if args.group_cre || args.cre_map.is_some() {
        let mapping = match &args.cre_map {
            Some(path) => {
                run.add_input(path)?;
                CreMapping::load(path).map_err(usage)?
            }
            None => CreMapping::default_mapping(),
        };
        let (grouped, dropped) = group_cre_lines(&dataset, &mapping).map_err(usage)?;
        dataset = grouped;
        println!("grouped cre lines into subclasses ({dropped} unmapped rows dropped):");
        let histogram = dataset.subclass_histogram();
        for (subclass, count) in Subclass::ALL.iter().zip(histogram) {
            println!("  {:<14} {count}", subclass.name());
        }
    }

    let (cleaned, excluded) = dataset.exclude_nan();
    println!(
        "excluded {excluded} samples with non-finite features; {} remain",
        cleaned.len()
    );
    if cleaned.is_empty() {
        return Err(usage("no samples left after cleaning"));
    }

    let spec = parse_split_spec(&args.splits, args.counts.as_deref())?;
    let strata = strata_keys(&cleaned, args.stratify_by.into(), &DendriteMap::default())
        .map_err(usage)?;
    let split = stratified_split(&strata, &spec, args.seed).map_err(usage)?;

    let train_set = cleaned.subset(&split.train);
    let validation_set = cleaned.subset(&split.validation);
    let test_set = cleaned.subset(&split.test);
    let stats = fit_normalize(&train_set).map_err(usage)?;

    let cleaned_path = out_dir.join("cleaned.csv");
    save_table(&cleaned, &schema, &cleaned_path)?;
    run.add_artifact(&cleaned_path);

    for (name, set) in [
        ("train.csv", &train_set),
        ("validation.csv", &validation_set),
        ("test.csv", &test_set),
    ] {
        let path = out_dir.join(name);
        save_table(&apply_normalize(set, &stats), &schema, &path)?;
        run.add_artifact(&path);
    }

    let stats_path = out_dir.join("norm_stats.json");
    fs::write(&stats_path, serde_json::to_string_pretty(&stats)?)
        .with_context(|| format!("could not write {}", stats_path.display()))?;
    run.add_artifact(&stats_path);

    println!(
        "split {} / {} / {} (train/validation/test) into {}",
        train_set.len(),
        validation_set.len(),
        test_set.len(),
        out_dir.display()
    );
    run.write(&out_dir.join("manifest.json"), started)
}

fn parse_split_spec(splits: &str, counts: Option<&str>) -> Result<SplitSpec> {
    if let Some(counts) = counts {
        let parts = parse_triple::<usize>(counts)
            .ok_or_else(|| usage(format!("--counts expects train/validation/test, got {counts:?}")))?;
        return Ok(SplitSpec::Counts {
            train: parts.0,
            validation: parts.1,
            test: parts.2,
        });
    }
    let parts = parse_triple::<f64>(splits)
        .ok_or_else(|| usage(format!("--splits expects three fractions like 0.8/0.1/0.1, got {splits:?}")))?;
    Ok(SplitSpec::Fractions {
        train_frac: parts.0,
        validation_frac: parts.1,
        test_frac: parts.2,
    })
}

fn parse_triple<T: std::str::FromStr>(text: &str) -> Option<(T, T, T)> {
    let mut parts = text.split('/');
    let a = parts.next()?.trim().parse().ok()?;
    let b = parts.next()?.trim().parse().ok()?;
    let c = parts.next()?.trim().parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((a, b, c))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let config = TrainConfig::load(&args.config).map_err(usage)?;
    let requested = match args.model {
        ModelArg::Dann => ModelKind::Dann,
        ModelArg::Lspin => ModelKind::Lspin,
    };
    if requested != config.model {
        return Err(usage(format!(
            "--model {} does not match the config's model = \"{}\"",
            requested.name(),
            config.model.name()
        )));
    }

    let schema = load_schema(args.schema.as_deref())?;
    let train_path = args.data_dir.join("train.csv");
    let train_set = load_table(&train_path, &schema).map_err(usage)?;
    let validation = load_optional_table(&args.data_dir.join("validation.csv"), &schema)?;

    let stats_path = args.data_dir.join("norm_stats.json");
    let stats_text = fs::read_to_string(&stats_path).map_err(|e| {
        usage(format!(
            "could not read {} ({e}); run `neurotype ingest` first",
            stats_path.display()
        ))
    })?;
    let stats: NormStats = serde_json::from_str(&stats_text)
        .map_err(|e| usage(format!("bad normalization sidecar {}: {e}", stats_path.display())))?;

    let out_dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("could not create {}", out_dir.display()))?;

    let mut run = RunManifest::new(
        "train",
        config.seed,
        serde_json::to_value(&config).expect("config serializes"),
    );
    run.add_input(&args.config)?;
    run.add_input(&train_path)?;
    run.add_input(&stats_path)?;

    let output = match train(&config, &train_set, validation.as_ref(), &DendriteMap::default()) {
        Ok(output) => output,
        Err(TrainError::Diverged { epoch, history }) => {
            let history_path = out_dir.join("history.csv");
            history.write_csv(&history_path)?;
            anyhow::bail!(
                "training diverged at epoch {epoch}; history up to the failure written to {}",
                history_path.display()
            );
        }
        Err(e @ (TrainError::Config(_) | TrainError::Data(_) | TrainError::Invalid(_))) => {
            return Err(usage(e))
        }
        Err(e) => return Err(e.into()),
    };

    let history_path = out_dir.join("history.csv");
    output.history.write_csv(&history_path)?;
    run.add_artifact(&history_path);

    let final_metric = output
        .history
        .records
        .last()
        .expect("at least one epoch")
        .validation_metric;
    let digest = schema.digest();
    for (name, model, epoch, metric) in [
        (
            "checkpoint_best.json",
            &output.best_model,
            output.best_epoch,
            output.best_metric,
        ),
        (
            "checkpoint_final.json",
            &output.final_model,
            config.epochs,
            final_metric,
        ),
    ] {
        let path = out_dir.join(name);
        Checkpoint::new(
            model.clone(),
            digest.clone(),
            stats.clone(),
            config.to_toml_string(),
            epoch,
            metric,
        )
        .save(&path)?;
        run.add_artifact(&path);
    }

    println!(
        "trained {} for {} epochs; best validation metric {:.4} at epoch {}",
        config.model.name(),
        config.epochs,
        output.best_metric,
        output.best_epoch
    );
    println!("artifacts in {}", out_dir.display());
    run.write(&out_dir.join("manifest.json"), started)
}

fn load_optional_table(path: &Path, schema: &FeatureSchema) -> Result<Option<Dataset>> {
    if !path.exists() {
        return Ok(None);
    }
    match load_table(path, schema) {
        Ok(dataset) => Ok(Some(dataset)),
        Err(DataError::EmptyTable { .. }) => Ok(None),
        Err(e) => Err(usage(e)),
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint).map_err(usage)?;
    let schema = load_schema(args.schema.as_deref())?;
    checkpoint.require_schema(&schema.digest()).map_err(usage)?;

    let dataset = match load_table(&args.data, &schema) {
        Ok(dataset) => dataset,
        Err(DataError::EmptyTable { .. }) => {
            return Err(usage(format!(
                "no samples to evaluate in {}",
                args.data.display()
            )))
        }
        Err(e) => return Err(usage(e)),
    };
    let dataset = if args.raw {
        apply_normalize(&dataset, &checkpoint.norm_stats)
    } else {
        dataset
    };

    let out_dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("could not create {}", out_dir.display()))?;

    match &checkpoint.model {
        TrainedModel::Lspin(model) => {
            let labels = dataset.subclass_indices().map_err(usage)?;
            let features = dataset.feature_matrix();
            let predictions = model.predict(&features);
            let report = score(&labels, &predictions, model.classes())?;
            let names: Vec<String> = Subclass::ALL[..model.classes()]
                .iter()
                .map(|s| s.name().to_string())
                .collect();

            let ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();
            let gates = args
                .export_gates
                .then(|| model.export_gate_matrix(&features));
            let gate_args = gates
                .as_ref()
                .map(|g| (g, ids.as_slice(), schema.names()));
            let written = render_reports(&out_dir, "", &report, &names, None, gate_args)?;
            print_summary("subclass", &report, &written);
        }
        TrainedModel::Dann(model) => {
            if args.export_gates {
                return Err(usage(
                    "--export-gates only applies to lspin checkpoints; this one is dann",
                ));
            }
            let map = DendriteMap::default();
            let labels: Vec<usize> = dataset.broad_labels(&map).map_err(usage)?;
            let features = dataset.feature_matrix();
            let predictions = model.predict_broad(&features);
            let names = vec!["excitatory".to_string(), "inhibitory".to_string()];

            let report = score(&labels, &predictions, 2)?;
            let binary = binary_summary(&report.confusion)?;
            let mut written = render_reports(&out_dir, "", &report, &names, Some(binary), None)?;
            print_summary("broad type", &report, &written);

            // One report per organism when the table mixes domains.
            let organisms: BTreeSet<Organism> = dataset
                .samples
                .iter()
                .filter_map(|s| s.organism)
                .collect();
            if organisms.len() > 1 {
                for organism in organisms {
                    let indices: Vec<usize> = dataset
                        .samples
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.organism == Some(organism))
                        .map(|(i, _)| i)
                        .collect();
                    let subset = dataset.subset(&indices);
                    let sub_labels = subset.broad_labels(&map).map_err(usage)?;
                    let sub_predictions = model.predict_broad(&subset.feature_matrix());
                    let sub_report = score(&sub_labels, &sub_predictions, 2)?;
                    let binary = binary_summary(&sub_report.confusion)?;
                    let prefix = format!("{}_", organism.name());
                    let more =
                        render_reports(&out_dir, &prefix, &sub_report, &names, Some(binary), None)?;
                    println!(
                        "{}: accuracy {:.4} over {} samples",
                        organism.name(),
                        sub_report.accuracy,
                        subset.len()
                    );
                    written.extend(more);
                }
            }
        }
    }
    Ok(())
}

fn score(labels: &[usize], predictions: &[usize], classes: usize) -> Result<EvalReport> {
    let cm = ConfusionMatrix::from_labels(labels, predictions, classes).map_err(usage)?;
    Ok(macro_scores(&cm)?)
}

fn binary_summary(cm: &ConfusionMatrix) -> Result<BinarySummary> {
    let positive = binary_scores(cm, 1)?;
    Ok(BinarySummary {
        positive: "inhibitory".into(),
        precision: positive.precision,
        recall: positive.recall,
        f1: positive.f1,
    })
}

fn print_summary(task: &str, report: &EvalReport, written: &[PathBuf]) {
    println!(
        "{task}: accuracy {:.4}, macro F1 {:.4} over {} samples",
        report.accuracy,
        report.macro_f1,
        report.confusion.total()
    );
    for path in written {
        println!("  wrote {}", path.display());
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let out_dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("could not create {}", out_dir.display()))?;

    let (dataset, truth_json, width) = match args.task {
        TaskArg::Blobs => {
            let spec = BlobsSpec {
                n: args.n,
                classes: args.classes,
                d_informative: args.d_informative,
                d_noise: args.d_noise,
                separation: args.separation,
                seed: args.seed,
            };
            let (dataset, truth) = synth_blobs(&spec).map_err(usage)?;
            let json = serde_json::to_string_pretty(&truth)?;
            (dataset, json, spec.d_informative + spec.d_noise)
        }
        TaskArg::Shift => {
            let spec = ShiftSpec {
                n_source: args.n_source,
                n_target: args.n_target,
                d: args.d,
                separation: args.separation,
                shift: args.shift,
                seed: args.seed,
            };
            let (dataset, truth) = synth_shifted_domains(&spec).map_err(usage)?;
            let sidecar = ShiftSidecar {
                domains_identical: spec.shift == 0.0,
                truth,
            };
            let json = serde_json::to_string_pretty(&sidecar)?;
            (dataset, json, spec.d)
        }
    };

    let schema = synth_schema(width, &out_dir)?;
    let data_path = out_dir.join("data.csv");
    save_table(&dataset, &schema, &data_path)?;
    let truth_path = out_dir.join("truth.json");
    fs::write(&truth_path, truth_json)
        .with_context(|| format!("could not write {}", truth_path.display()))?;

    println!(
        "wrote {} samples to {} (ground truth in {})",
        dataset.len(),
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ShiftSidecar {
    domains_identical: bool,
    #[serde(flatten)]
    truth: ShiftTruth,
}

/// The standard panel when widths line up; otherwise generated names plus a
/// schema file so later commands can read the table back.
fn synth_schema(width: usize, out_dir: &Path) -> Result<FeatureSchema> {
    if width == FEATURE_COUNT {
        return Ok(FeatureSchema::standard());
    }
    let names: Vec<String> = (0..width).map(|i| format!("f{i:03}")).collect();
    let schema = FeatureSchema::custom(names).expect("generated names are unique");
    let path = out_dir.join("schema.txt");
    fs::write(&path, schema.names().join("\n"))
        .with_context(|| format!("could not write {}", path.display()))?;
    Ok(schema)
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

/// Relative --out-dir paths land under NEUROTYPE_OUT_ROOT when it is set.
fn resolve_out_dir(path: PathBuf) -> PathBuf {
    match std::env::var_os("NEUROTYPE_OUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path,
    }
}

fn load_schema(path: Option<&Path>) -> Result<FeatureSchema> {
    let Some(path) = path else {
        return Ok(FeatureSchema::standard());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("could not read schema {}: {e}", path.display())))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    FeatureSchema::custom(names).map_err(usage)
}
