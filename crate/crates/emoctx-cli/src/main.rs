//! `emoctx` — command-line front end for the emotion-in-context toolkit.
//!
//! Subcommands cover the full workflow: dataset conversion, weight
//! ingestion, training, evaluation, per-person prediction, dataset
//! stylization, ablation grids, report comparison, and synthetic smoke
//! datasets.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime
//! failure (I/O, divergence, failed stylization job).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use emoctx::dataset::convert::convert_csv;
use emoctx::dataset::{parse_manifest, Split};
use emoctx::harness::{
    self, ablate, config_hash, load_train_config, EvalOptions, TrainConfig,
};
use emoctx::metrics::{compare_reports, format_delta, MetricsReport};
use emoctx::model::{weights, Backbone, ContextPretraining, EmotionModel};
use emoctx::stylize::{stylize_dataset, StyleCorpus, StylizationJob, STYLIZER_IDS};
use emoctx::{exec, Error, Result};

#[derive(Parser)]
#[command(
    name = "emoctx",
    version,
    about = "Person-level emotion recognition in context: training, evaluation, stylization"
)]
struct Cli {
    /// Training configuration file (used by `train` and `ablate`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the seed (training runs, weight synthesis, stylization,
    /// synthetic data).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Compute device. Only `cpu` is available in this build.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,

    /// Worker threads for data-parallel sections: 0 = one per core,
    /// 1 = fully sequential.
    #[arg(long, global = true, value_name = "K")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a per-person annotation table into a dataset manifest.
    Convert(ConvertArgs),
    /// Install trunk weights: validate + copy a weight file, or
    /// synthesize a random stand-in for offline work.
    FetchWeights(FetchWeightsArgs),
    /// Train a model from a configuration file.
    Train(TrainArgs),
    /// Score a checkpoint against a manifest and report metrics.
    Evaluate(EvaluateArgs),
    /// Print per-person predictions for a manifest.
    Predict(PredictArgs),
    /// Restyle every image of a dataset against a style corpus.
    Stylize(StylizeArgs),
    /// Train the 2x2 {INW, 224B} grid around a base config and print
    /// the comparison table.
    Ablate(AblateArgs),
    /// Compare two saved metric reports.
    Compare(CompareArgs),
    /// Generate a synthetic smoke dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Source format. Only `csv` (one row per annotated person) is
    /// supported.
    #[arg(long, default_value = "csv")]
    from: String,
    /// Input annotation file.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Manifest file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Dataset split recorded in the manifest.
    #[arg(long, default_value = "train")]
    split: String,
    /// Source tag recorded in the manifest (e.g. `emotic`).
    #[arg(long, default_value = "converted")]
    source_tag: String,
    /// Directory image paths are relative to. Defaults to the output
    /// manifest's directory.
    #[arg(long, value_name = "DIR")]
    base_dir: Option<PathBuf>,
    /// Verify that every referenced image file exists.
    #[arg(long)]
    check_files: bool,
}

#[derive(Args)]
struct FetchWeightsArgs {
    /// Existing trunk weight file to validate and install.
    #[arg(long, value_name = "FILE", conflicts_with = "synthesize")]
    from: Option<PathBuf>,
    /// Generate seeded random trunk weights instead of ingesting real
    /// ones (for offline smoke runs; clearly marked in the file).
    #[arg(long)]
    synthesize: bool,
    /// Trunk architecture (`resnet18`/`resnet50`), required with
    /// --synthesize.
    #[arg(long, value_name = "NAME")]
    backbone: Option<String>,
    /// Pretraining scheme (`scene`/`object`), required with
    /// --synthesize.
    #[arg(long, value_name = "NAME")]
    pretraining: Option<String>,
    /// Directory the canonical weight file is written into.
    #[arg(long, value_name = "DIR", default_value = "weights")]
    dest: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Output directory. Defaults to `runs/<config-hash-prefix>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Score only each person's predominant category as a positive.
    #[arg(long)]
    predominant_only: bool,
    /// Write the full report as JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Print per-category AP values.
    #[arg(long)]
    per_category: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Predict only this image (default: every image).
    #[arg(long, value_name = "ID")]
    image_id: Option<String>,
    /// Number of top-scoring categories to print.
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Args)]
struct StylizeArgs {
    /// Source dataset manifest.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory of style images (png/jpg).
    #[arg(long, value_name = "DIR")]
    styles: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Style strength: 0 = keep content statistics, 1 = adopt style
    /// statistics.
    #[arg(long, default_value_t = 1.0)]
    strength: f32,
    /// Stylizer implementation.
    #[arg(long, default_value = "featstat")]
    stylizer: String,
}

#[derive(Args)]
struct AblateArgs {
    /// Output directory (one subdirectory per grid cell).
    #[arg(long, value_name = "DIR", default_value = "ablation")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report (JSON).
    #[arg(long, value_name = "FILE")]
    a: PathBuf,
    /// Comparison report (JSON).
    #[arg(long, value_name = "FILE")]
    b: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    images: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 1)]
    persons_per_image: usize,
    #[arg(long, default_value = "train")]
    split: String,
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig { msg }
}

/// Load the config named by --config, applying the global seed override.
fn resolved_config(cli: &Cli) -> Result<TrainConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        invalid("this command needs --config <FILE> (flat key = value format)".to_string())
    })?;
    let mut config = load_train_config(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    if args.from != "csv" {
        return Err(invalid(format!(
            "unsupported source format '{}' (supported: csv)",
            args.from
        )));
    }
    let split = Split::parse(&args.split)?;
    let base_dir = match &args.base_dir {
        Some(dir) => dir.clone(),
        None => args
            .out
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default(),
    };
    let manifest = convert_csv(&args.input, split, &args.source_tag, &base_dir)?;
    if args.check_files {
        manifest.check_files()?;
    }
    manifest.save(&args.out)?;
    println!(
        "wrote {} ({} images, {} persons)",
        args.out.display(),
        manifest.records.len(),
        manifest.person_count()
    );
    Ok(())
}

fn cmd_fetch_weights(args: &FetchWeightsArgs, seed: Option<u64>) -> Result<()> {
    let path = match (&args.from, args.synthesize) {
        (Some(src), false) => weights::ingest(src, &args.dest)?,
        (None, true) => {
            let parse = |what: &str, value: &Option<String>| {
                value.clone().ok_or_else(|| {
                    invalid(format!("--synthesize needs --{what}"))
                })
            };
            let backbone: Backbone = parse("backbone", &args.backbone)?.parse()?;
            let scheme: ContextPretraining = parse("pretraining", &args.pretraining)?.parse()?;
            weights::synthesize(backbone, scheme, &args.dest, seed.unwrap_or(0))?
        }
        _ => {
            return Err(invalid(
                "pass exactly one of --from <FILE> or --synthesize".to_string(),
            ))
        }
    };
    println!("installed {}", path.display());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let config = resolved_config(cli)?;
    config.validate()?;
    let hash = config_hash(&config);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&hash[..16]));
    let (ckpt, record) = harness::train(&config, &out)?;
    println!(
        "finished {} epochs in {:.1}s",
        record.epochs.len(),
        record.total_seconds
    );
    println!(
        "best epoch {} (val mAP {:.2}%), checkpoint {}",
        record.best_epoch,
        record.best_val_mean_ap * 100.0,
        ckpt.display()
    );
    println!("run record {}", out.join("run_record.json").display());
    Ok(())
}

fn print_report(report: &MetricsReport, per_category: bool) {
    println!(
        "dataset '{}' | {} persons | config {}",
        report.source_tag,
        report.instances,
        &report.config_hash[..report.config_hash.len().min(16)]
    );
    println!(
        "mean AP {:.2}% over {} categories ({} excluded: no positives){}",
        report.discrete.mean_ap * 100.0,
        report.discrete.per_category_ap.len(),
        report.discrete.excluded_categories.len(),
        if report.predominant_only {
            " [predominant only]"
        } else {
            ""
        }
    );
    println!(
        "VAD MAE {:.4} (valence {:.4}, arousal {:.4}, dominance {:.4})",
        report.vad.mean_mae, report.vad.mae_valence, report.vad.mae_arousal, report.vad.mae_dominance
    );
    if per_category {
        for (name, ap) in &report.discrete.per_category_ap {
            println!("  {name:<22} {:.2}%", ap * 100.0);
        }
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let report = harness::evaluate_checkpoint(
        &args.checkpoint,
        &args.manifest,
        EvalOptions {
            predominant_only: args.predominant_only,
        },
    )?;
    print_report(&report, args.per_category);
    if let Some(out) = &args.out {
        report.save(out)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = EmotionModel::load_checkpoint(&args.checkpoint)?;
    let manifest = parse_manifest(&args.manifest)?;
    let mut matched = false;
    for record in &manifest.records {
        if let Some(id) = &args.image_id {
            if &record.image_id != id {
                continue;
            }
        }
        matched = true;
        for (p, person) in record.persons.iter().enumerate() {
            let pred = model.predict_person(&manifest, record, person)?;
            let top: Vec<String> = pred
                .ranked_categories
                .iter()
                .take(args.top.max(1))
                .map(|(name, score)| format!("{name} {score:.3}"))
                .collect();
            println!(
                "{} person {}: {} | VAD {:.2} {:.2} {:.2}",
                record.image_id,
                p,
                top.join(", "),
                pred.vad[0],
                pred.vad[1],
                pred.vad[2]
            );
        }
    }
    if !matched {
        return Err(invalid(match &args.image_id {
            Some(id) => format!("image id '{id}' not found in manifest"),
            None => "manifest has no records".to_string(),
        }));
    }
    Ok(())
}

fn cmd_stylize(args: &StylizeArgs, seed: Option<u64>) -> Result<()> {
    if !STYLIZER_IDS.contains(&args.stylizer.as_str()) {
        return Err(invalid(format!(
            "unknown stylizer '{}' (available: {})",
            args.stylizer,
            STYLIZER_IDS.join(", ")
        )));
    }
    let source = parse_manifest(&args.manifest)?;
    let styles = StyleCorpus::from_dir(&args.styles, seed.unwrap_or(0))?;
    println!(
        "stylizing {} images against {} styles (strength {})",
        source.records.len(),
        styles.paths.len(),
        args.strength
    );
    let job = StylizationJob {
        source,
        styles,
        stylizer_id: args.stylizer.clone(),
        strength: args.strength,
        output_dir: args.out.clone(),
    };
    let manifest = stylize_dataset(&job)?;
    println!(
        "wrote {} ({} images, source tag '{}')",
        args.out.join("manifest.jsonl").display(),
        manifest.records.len(),
        manifest.source_tag
    );
    Ok(())
}

fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let base = resolved_config(cli)?;
    let grid = ablate::ablation_grid(&base);
    let table = ablate::run_ablation(&grid, &args.out)?;
    print!("{}", table.format());
    println!("table written to {}", args.out.join("table.md").display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let a = MetricsReport::load(&args.a)?;
    let b = MetricsReport::load(&args.b)?;
    let delta = compare_reports(&a, &b)?;
    print!("{}", format_delta(&a, &b, &delta));
    Ok(())
}

fn cmd_synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let spec = emoctx::harness::synth::SynthSpec {
        images: args.images,
        side: args.side,
        persons_per_image: args.persons_per_image,
        split: Split::parse(&args.split)?,
        seed: seed.unwrap_or(0),
        ..Default::default()
    };
    let manifest = emoctx::harness::synth::generate(&spec, &args.out)?;
    println!(
        "wrote {} ({} images, {} persons)",
        args.out.join("manifest.jsonl").display(),
        manifest.records.len(),
        manifest.person_count()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(invalid(format!(
            "unknown device '{}' (this build supports: cpu)",
            cli.device
        )));
    }
    if let Some(workers) = cli.workers {
        exec::configure_workers(workers);
    }
    match &cli.command {
        Command::Convert(args) => cmd_convert(args),
        Command::FetchWeights(args) => cmd_fetch_weights(args, cli.seed),
        Command::Train(args) => cmd_train(cli, args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Stylize(args) => cmd_stylize(args, cli.seed),
        Command::Ablate(args) => cmd_ablate(cli, args),
        Command::Compare(args) => cmd_compare(args),
        Command::Synth(args) => cmd_synth(args, cli.seed),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
